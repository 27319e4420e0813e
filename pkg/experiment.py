"""Experiment documents: JSON config -> DelayProblem, SolverConfig, certificate.

A document has the sections ``model``, ``delay``, ``gain``, ``history``,
``solver``, ``analysis`` and optionally ``nonlinearity``. Missing or invalid
entries raise :class:`errors.ConfigError` naming the dotted key path.
Defaults come from ``config.toml`` (see :mod:`settings`).
"""
import copy
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from analysis import default_omega_primes
from core_types import (DelayFunction, DelayProblem, GainFunction, GeneratorOperator, HistorySegment,
                        Nonlinearity)
from errors import ConfigError
from expressions import Expression
from models import ElasticityModelConfig, WaveModelConfig, build_elasticity, build_matrix, build_scalar, build_wave
from semigroup import SemigroupCertificate, audit_certificate, estimate_certificate
from settings import load_defaults
from solver import SolverConfig

logger = logging.getLogger(__name__)

MODEL_KINDS = ("scalar", "matrix", "wave", "elasticity")
REQUIRED_SECTIONS = ("model", "delay", "gain", "solver")
SOLVER_NUMBERS = ("dt", "picard_tolerance", "window_safety")


def _require(section: Dict, key: str, path: str) -> Any:
    if not isinstance(section, dict) or key not in section:
        raise ConfigError("missing required key", f"{path}.{key}" if path else key)
    return section[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    return float(value)


def _numbers(value, path: str) -> np.ndarray:
    try:
        out = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"expected numbers, got {value!r}", path) from None
    return out


def _expression(text, variables, path: str) -> Expression:
    try:
        return Expression.parse(text, variables)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


class _Section:
    """Turns ValueErrors and TypeErrors raised while building a section into ConfigErrors"""

    def __init__(self, path: str):
        self.path = path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, (ValueError, TypeError)) \
                and not issubclass(exc_type, ConfigError):
            raise ConfigError(str(exc), self.path) from exc
        return False


def parse_delay(doc: Dict) -> DelayFunction:
    kind = _require(doc, "kind", "delay")
    with _Section("delay"):
        if kind == "constant":
            value = _number(_require(doc, "value", "delay"), "delay.value")
            upper = doc.get("upper_bound", value)
            lower = doc.get("lower_bound", value)
            return DelayFunction.constant(value, upper, lower)
        if kind == "expression":
            text = _require(doc, "expr", "delay")
            upper = _number(_require(doc, "upper_bound", "delay"), "delay.upper_bound")
            _expression(text, ("t",), "delay.expr")
            return DelayFunction.from_expression(text, upper, _number(doc.get("lower_bound", 0.0), "delay.lower_bound"))
        if kind == "grid":
            times = _numbers(_require(doc, "times", "delay"), "delay.times")
            values = _numbers(_require(doc, "values", "delay"), "delay.values")
            upper = _number(doc.get("upper_bound", float(np.max(values))), "delay.upper_bound")
            return DelayFunction.on_grid(times, values, upper, _number(doc.get("lower_bound", 0.0), "delay.lower_bound"))
    raise ConfigError(f"unknown delay kind {kind!r}", "delay.kind")


def parse_gain(doc: Dict) -> GainFunction:
    kind = _require(doc, "kind", "gain")
    with _Section("gain"):
        if kind == "constant":
            gain = GainFunction.constant(_number(_require(doc, "value", "gain"), "gain.value"))
        elif kind == "piecewise-constant":
            gain = GainFunction.piecewise_constant(_numbers(doc.get("breakpoints", []), "gain.breakpoints"),
                                                   _numbers(_require(doc, "values", "gain"), "gain.values"))
        elif kind == "piecewise-linear":
            nodes = doc.get("nodes", doc.get("breakpoints"))
            if nodes is None:
                raise ConfigError("missing required key", "gain.nodes")
            gain = GainFunction.piecewise_linear(_numbers(nodes, "gain.nodes"),
                                                 _numbers(_require(doc, "values", "gain"), "gain.values"))
        elif kind == "expression":
            text = _require(doc, "expr", "gain")
            _expression(text, ("t",), "gain.expr")
            period = doc.get("period")
            gain = GainFunction.from_expression(text, list(_numbers(doc.get("breakpoints", []), "gain.breakpoints")),
                                                None if period is None else _number(period, "gain.period"))
        else:
            raise ConfigError(f"unknown gain kind {kind!r}", "gain.kind")
        if "window_bound" in doc:
            gain = gain.with_window_bound(_number(doc["window_bound"], "gain.window_bound"))
    return gain


def parse_history(doc: Optional[Dict], tau_bar: float, dimension: int) -> HistorySegment:
    if doc is None:
        raise ConfigError("missing required key", "history")
    kind = _require(doc, "kind", "history")
    interpolation = doc.get("interpolation", "linear")
    with _Section("history"):
        if kind == "constant":
            value = np.broadcast_to(_numbers(_require(doc, "value", "history"), "history.value"), (dimension,))
            return HistorySegment.constant(value, tau_bar, int(doc.get("nodes", 2)))
        if kind == "expression":
            components = _require(doc, "components", "history")
            components = [components] if isinstance(components, str) else list(components)
            if len(components) != dimension:
                raise ConfigError(f"expected {dimension} component expression(s)", "history.components")
            exprs = [_expression(c, ("t",), f"history.components[{i}]") for i, c in enumerate(components)]
            return HistorySegment.from_function(lambda t: np.stack([e(t=t) for e in exprs], axis=-1), tau_bar,
                                                int(doc.get("nodes", 65)), interpolation)
        if kind == "grid":
            times = _numbers(_require(doc, "times", "history"), "history.times")
            values = _numbers(_require(doc, "values", "history"), "history.values")
            return HistorySegment(times, values, interpolation)
    raise ConfigError(f"unknown history kind {kind!r}", "history.kind")


def _fields(value, components: int, path: str):
    if value is None:
        return None
    texts = [value] if isinstance(value, str) else list(value)
    if len(texts) != components:
        raise ConfigError(f"expected {components} field expression(s)", path)
    exprs = [_expression(text, ("t", "x", "y"), f"{path}[{i}]") for i, text in enumerate(texts)]
    return [lambda t, x, y, e=e: e(t=t, x=x, y=y) for e in exprs]


def parse_nonlinearity(doc: Optional[Dict], generator: GeneratorOperator) -> Optional[Nonlinearity]:
    if doc is None:
        return None
    kind = _require(doc, "kind", "nonlinearity")
    lipschitz = _number(_require(doc, "lipschitz", "nonlinearity"), "nonlinearity.lipschitz")
    with _Section("nonlinearity"):
        if kind == "expression":
            text = _require(doc, "expr", "nonlinearity")
            _expression(text, ("u",), "nonlinearity.expr")
            return Nonlinearity.from_expression(text, lipschitz)
        return Nonlinearity.from_catalog(kind, lipschitz, generator)


@dataclass
class Experiment:
    document: Dict
    name: str = "experiment"
    defaults: Dict = field(default_factory=load_defaults)

    def __post_init__(self):
        if not isinstance(self.document, dict):
            raise ConfigError("experiment document must be a JSON object")
        for section in REQUIRED_SECTIONS:
            _require(self.document, section, "")
        _require(self.document["solver"], "T", "solver")

    @classmethod
    def from_file(cls, path, defaults: Optional[Dict] = None) -> "Experiment":
        path = Path(path)
        try:
            with open(path) as fh:
                document = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc.msg} (line {exc.lineno})") from None
        return cls(document, path.stem, defaults if defaults is not None else load_defaults())

    # Resolution
    def resolved(self) -> Dict:
        """The document with every default filled in"""
        doc = copy.deepcopy(self.document)
        solver = dict(self.defaults["solver"])
        solver["method"] = "auto"
        solver.update(doc["solver"])
        doc["solver"] = solver
        analysis = {
            "omega_fraction": self.defaults["semigroup"]["omega_fraction"],
            "grid_density": self.defaults["semigroup"]["grid_density"],
            "slack": self.defaults["analysis"]["slack"],
            "history_refinement": self.defaults["analysis"]["history_refinement"],
            "window_subdivisions": self.defaults["analysis"]["window_subdivisions"],
            "omega_prime_count": self.defaults["analysis"]["omega_prime_count"],
            "target_time": solver["T"],
            "oracle_refinement": self.defaults["oracle"]["refinement"],
            "oracle_tolerance": self.defaults["oracle"]["tolerance"],
        }
        analysis.update(doc.get("analysis", {}))
        doc["analysis"] = analysis
        return doc

    @property
    def horizon(self) -> float:
        T = _number(self.document["solver"]["T"], "solver.T")
        if not T > 0:
            raise ConfigError("horizon must be positive", "solver.T")
        return T

    @property
    def method(self) -> str:
        method = self.resolved()["solver"]["method"]
        if method not in ("auto", "steps", "picard"):
            raise ConfigError(f"unknown method {method!r}", "solver.method")
        return method

    @property
    def analysis(self) -> Dict:
        return self.resolved()["analysis"]

    def solver_config(self) -> SolverConfig:
        solver = self.resolved()["solver"]
        for key in SOLVER_NUMBERS:
            if key in solver:
                _number(solver[key], f"solver.{key}")
        iterations = solver.get("picard_max_iterations")
        if isinstance(iterations, bool) or not isinstance(iterations, int):
            raise ConfigError(f"expected an integer, got {iterations!r}", "solver.picard_max_iterations")
        with _Section("solver"):
            return SolverConfig.from_mapping(solver)

    # Building
    @cached_property
    def problem(self) -> DelayProblem:
        doc = self.document
        model = doc["model"]
        kind = _require(model, "kind", "model")
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}", "model.kind")
        delay = parse_delay(doc["delay"])
        gain = parse_gain(doc["gain"])

        with _Section("model"):
            if kind == "scalar":
                a = _number(_require(model, "a", "model"), "model.a")
                b = _number(_require(model, "b", "model"), "model.b")
                history = parse_history(doc.get("history"), delay.tau_bar, 1)
                problem = build_scalar(a, b, gain, delay, history)
            elif kind == "matrix":
                A = _numbers(_require(model, "A", "model"), "model.A")
                B = _numbers(_require(model, "B", "model"), "model.B")
                metric = model.get("metric")
                history = parse_history(doc.get("history"), delay.tau_bar, int(np.atleast_2d(A).shape[0]))
                problem = build_matrix(A, B, gain, delay, history,
                                       None if metric is None else _numbers(metric, "model.metric"))
            else:
                problem = self._build_field_model(kind, model, gain, delay)
        nonlinearity = parse_nonlinearity(doc.get("nonlinearity"), problem.generator)
        if nonlinearity is not None:
            with _Section("nonlinearity"):
                problem = problem.replace(nonlinearity=nonlinearity)
        return problem.replace(name=self.name)

    def _build_field_model(self, kind, model, gain, delay) -> DelayProblem:
        history = self.document.get("history") or {}
        dimension = int(model.get("dimension", 1))
        components = dimension if kind == "elasticity" else 1
        options = dict(
            nodes=model.get("nodes", 50),
            length=model.get("length", 1.0),
            dimension=dimension,
            damping=_number(model.get("damping", 1.0), "model.damping"),
            damping_region=model.get("damping_region"),
            delay_region=model.get("delay_region"),
            gain=gain,
            delay=delay,
            speed=_number(model.get("speed", 1.0), "model.speed"),
            history_nodes=int(history.get("nodes", 33)),
            history_interpolation=history.get("interpolation", "linear"),
        )
        if history.get("kind") == "zero":
            zero = ["0"] * components
            options.update(history_u=_fields(zero, components, "history.u"),
                           history_v=_fields(zero, components, "history.v"))
        else:
            options.update(history_u=_fields(history.get("u"), components, "history.u"),
                           history_v=_fields(history.get("v"), components, "history.v"))
        if kind == "wave":
            return build_wave(WaveModelConfig(**options))
        lame = _numbers(model.get("lame", [1.0, 1.0]), "model.lame")
        if lame.shape != (2,):
            raise ConfigError("expected [lambda, mu]", "model.lame")
        return build_elasticity(ElasticityModelConfig(**options, lame=(float(lame[0]), float(lame[1]))))

    def certificate(self) -> SemigroupCertificate:
        """User-supplied (audited against sampled norms), closed-form (scalar) or estimated, in that order"""
        analysis = self.analysis
        supplied = analysis.get("certificate")
        if supplied is not None:
            with _Section("analysis.certificate"):
                claimed = SemigroupCertificate(
                    _number(_require(supplied, "M", "analysis.certificate"), "analysis.certificate.M"),
                    _number(_require(supplied, "omega", "analysis.certificate"), "analysis.certificate.omega"),
                    provenance="user-supplied")
            return audit_certificate(self.problem.generator, claimed.M, claimed.omega,
                                     int(analysis["grid_density"]), claimed.provenance)
        if self.problem.certificate is not None:
            return self.problem.certificate
        return estimate_certificate(self.problem.generator, analysis["omega_fraction"],
                                    int(analysis["grid_density"]))

    def omega_primes(self, omega: float) -> np.ndarray:
        analysis = self.analysis
        if "omega_primes" in analysis:
            return _numbers(analysis["omega_primes"], "analysis.omega_primes")
        return default_omega_primes(omega, int(analysis["omega_prime_count"]))
