"""Closed-form expressions for delays, gains, history data and nonlinearities.

The grammar is deliberately tiny: numbers, ``+ - * / **`` (``^`` is accepted
as power), unary minus, parentheses, the functions ``sin cos exp abs sqrt``,
the constant ``pi`` and a declared set of variable names. Text is parsed with
:mod:`ast` and every node is whitelisted before evaluation, so configuration
files can never reach arbitrary Python.
"""
import ast
from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

FUNCTIONS: Dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
}

CONSTANTS: Dict[str, float] = {"pi": float(np.pi)}

_BINARY = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


@dataclass(frozen=True)
class Expression:
    text: str
    variables: Tuple[str, ...] = ("t",)
    _tree: ast.AST = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("expression must be a non-empty string")
        object.__setattr__(self, "variables", tuple(self.variables))
        if self._tree is None:
            try:
                tree = ast.parse(self.text.replace("^", "**"), mode="eval").body
            except SyntaxError as exc:
                raise ValueError(f"cannot parse expression {self.text!r}: {exc.msg}") from None
            _validate(tree, self.variables, self.text)
            object.__setattr__(self, "_tree", tree)

    @classmethod
    def parse(cls, text: str, variables=("t",)) -> "Expression":
        return cls(text=text, variables=tuple(variables))

    def __call__(self, **values) -> np.ndarray:
        missing = [name for name in self.variables if name not in values]
        if missing:
            raise ValueError(f"expression {self.text!r} needs values for {missing}")
        arrays = {name: np.asarray(values[name], dtype=float) for name in self.variables}
        shape = np.broadcast_shapes(*(a.shape for a in arrays.values())) if arrays else ()
        with np.errstate(all="ignore"):
            result = _evaluate(self._tree, arrays)
        return np.broadcast_to(np.asarray(result, dtype=float), shape).copy()

    def uses(self, name: str) -> bool:
        return any(isinstance(node, ast.Name) and node.id == name for node in ast.walk(self._tree))


def _validate(node: ast.AST, variables: Tuple[str, ...], text: str) -> None:
    callees = {id(sub.func) for sub in ast.walk(node) if isinstance(sub, ast.Call)}
    for sub in ast.walk(node):
        if isinstance(sub, ast.Name) and id(sub) in callees:
            continue
        if isinstance(sub, (ast.Expression, ast.Load, ast.operator, ast.unaryop)):
            if isinstance(sub, ast.operator) and type(sub) not in _BINARY:
                raise ValueError(f"operator {type(sub).__name__} not allowed in {text!r}")
            if isinstance(sub, ast.unaryop) and not isinstance(sub, (ast.USub, ast.UAdd)):
                raise ValueError(f"operator {type(sub).__name__} not allowed in {text!r}")
            continue
        if isinstance(sub, ast.Constant):
            if isinstance(sub.value, bool) or not isinstance(sub.value, (int, float)):
                raise ValueError(f"only numeric literals are allowed in {text!r}")
        elif isinstance(sub, ast.Name):
            if sub.id not in variables and sub.id not in CONSTANTS:
                raise ValueError(f"unknown name {sub.id!r} in {text!r}")
        elif isinstance(sub, ast.Call):
            if not isinstance(sub.func, ast.Name) or sub.func.id not in FUNCTIONS:
                raise ValueError(f"unknown function in {text!r}")
            if len(sub.args) != 1 or sub.keywords:
                raise ValueError(f"functions take exactly one argument in {text!r}")
        elif not isinstance(sub, (ast.BinOp, ast.UnaryOp)):
            raise ValueError(f"construct {type(sub).__name__} not allowed in {text!r}")


def _evaluate(node: ast.AST, values: Dict[str, np.ndarray]):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in values:
            return values[node.id]
        return CONSTANTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINARY[type(node.op)](_evaluate(node.left, values), _evaluate(node.right, values))
    if isinstance(node, ast.UnaryOp):
        operand = _evaluate(node.operand, values)
        return np.negative(operand) if isinstance(node.op, ast.USub) else operand
    if isinstance(node, ast.Call):
        return FUNCTIONS[node.func.id](_evaluate(node.args[0], values))
    raise ValueError(f"unsupported node {type(node).__name__}")
