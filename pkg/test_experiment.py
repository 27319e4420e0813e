import copy
import json
from pathlib import Path

import numpy as np
import pytest

from errors import ConfigError
from experiment import Experiment, parse_delay, parse_gain, parse_history, parse_nonlinearity
from core_types import GeneratorOperator

SAMPLES = Path(__file__).with_name("experiments")


def _without(document, section, key=None):
    doc = copy.deepcopy(document)
    if key is None:
        del doc[section]
    else:
        del doc[section][key]
    return doc


def test_parse_delay_kinds():
    assert parse_delay({"kind": "constant", "value": 0.5}).tau_bar == 0.5
    delay = parse_delay({"kind": "expression", "expr": "0.5 + 0.4*sin(t)^2", "upper_bound": 0.9, "lower_bound": 0.5})
    assert delay(0.0) == pytest.approx(0.5)
    grid = parse_delay({"kind": "grid", "times": [0.0, 1.0], "values": [0.2, 0.4]})
    assert grid.tau_bar == pytest.approx(0.4)
    assert grid(0.5) == pytest.approx(0.3)


@pytest.mark.parametrize("doc, path", [
    ({"kind": "constant"}, "delay.value"),
    ({"kind": "constant", "value": "one"}, "delay.value"),
    ({"kind": "expression", "expr": "t"}, "delay.upper_bound"),
    ({"kind": "expression", "expr": "import os", "upper_bound": 1.0}, "delay.expr"),
    ({"kind": "spline", "value": 1.0}, "delay.kind"),
    ({"value": 1.0}, "delay.kind"),
    ({"kind": "constant", "value": -1.0}, "delay"),
])
def test_delay_errors_name_the_key(doc, path):
    with pytest.raises(ConfigError) as info:
        parse_delay(doc)
    assert info.value.key_path == path
    assert str(info.value).startswith(f"{path}: ")


def test_parse_gain_kinds():
    assert parse_gain({"kind": "constant", "value": 0.3}).structure == "constant"
    pulse = parse_gain({"kind": "piecewise-constant", "breakpoints": [1.0, 2.0], "values": [0.0, 1.0, 0.0]})
    assert pulse.structure == "compact" and pulse.support_end == 2.0
    hat = parse_gain({"kind": "piecewise-linear", "nodes": [0.0, 1.0, 2.0], "values": [0.0, 1.0, 0.0]})
    assert hat(0.5) == pytest.approx(0.5)
    wave = parse_gain({"kind": "expression", "expr": "sin(t)", "period": 6.283185307179586})
    assert wave.structure == "periodic"
    bounded = parse_gain({"kind": "constant", "value": 0.3, "window_bound": 0.3})
    assert bounded.structure == "constant"


@pytest.mark.parametrize("doc, path", [
    ({"kind": "piecewise-constant", "breakpoints": [1.0]}, "gain.values"),
    ({"kind": "piecewise-linear", "values": [0.0, 1.0]}, "gain.nodes"),
    ({"kind": "expression", "expr": "t +"}, "gain.expr"),
    ({"kind": "ramp"}, "gain.kind"),
    ({"kind": "constant", "value": 0.3, "window_bound": True}, "gain.window_bound"),
])
def test_gain_errors_name_the_key(doc, path):
    with pytest.raises(ConfigError) as info:
        parse_gain(doc)
    assert info.value.key_path == path


def test_parse_history():
    h = parse_history({"kind": "constant", "value": [1.0, 2.0]}, 0.5, 2)
    np.testing.assert_array_equal(h.initial_state, [1.0, 2.0])
    h = parse_history({"kind": "expression", "components": "cos(t)"}, 1.0, 1)
    assert h(-1.0)[0] == pytest.approx(np.cos(-1.0), abs=1e-3)
    with pytest.raises(ConfigError) as info:
        parse_history(None, 1.0, 1)
    assert info.value.key_path == "history"
    with pytest.raises(ConfigError) as info:
        parse_history({"kind": "expression", "components": ["1", "2"]}, 1.0, 1)
    assert info.value.key_path == "history.components"


def test_parse_nonlinearity():
    g = GeneratorOperator(-np.eye(2))
    assert parse_nonlinearity(None, g) is None
    G = parse_nonlinearity({"kind": "saturation", "lipschitz": 0.1}, g)
    assert G.lipschitz == 0.1 and G.name == "saturation"
    G = parse_nonlinearity({"kind": "expression", "expr": "0.1*sin(u)", "lipschitz": 0.1}, g)
    np.testing.assert_allclose(G([0.0, np.pi / 2]), [0.0, 0.1])
    with pytest.raises(ConfigError) as info:
        parse_nonlinearity({"kind": "cubic", "lipschitz": 0.1}, g)
    assert info.value.key_path == "nonlinearity"
    with pytest.raises(ConfigError) as info:
        parse_nonlinearity({"kind": "tanh"}, g)
    assert info.value.key_path == "nonlinearity.lipschitz"


# Documents
def test_missing_sections_are_reported(scalar_document):
    with pytest.raises(ConfigError) as info:
        Experiment(_without(scalar_document, "gain"))
    assert info.value.key_path == "gain"
    with pytest.raises(ConfigError) as info:
        Experiment(_without(scalar_document, "solver", "T"))
    assert info.value.key_path == "solver.T"


def test_resolved_fills_defaults(scalar_document):
    exp = Experiment(scalar_document, "bench")
    resolved = exp.resolved()
    assert resolved["solver"]["dt"] == 0.01
    assert resolved["solver"]["method"] == "auto"
    assert resolved["solver"]["picard_max_iterations"] == 200
    assert resolved["analysis"]["target_time"] == 5.0
    assert resolved["analysis"]["oracle_refinement"] == 8
    assert resolved["analysis"]["omega_prime_count"] == 100
    assert "method" not in scalar_document["solver"]
    assert exp.solver_config().dt == 0.01
    assert exp.horizon == 5.0


def test_scalar_problem_and_certificate(scalar_document):
    exp = Experiment(scalar_document, "bench")
    p = exp.problem
    assert p.name == "bench" and p.dimension == 1
    assert p.feedback.operator_norm == 1.0
    cert = exp.certificate()
    assert cert.provenance == "closed-form" and cert.omega == 1.0
    assert len(exp.omega_primes(cert.omega)) == 100


def test_user_certificate_takes_precedence(scalar_document):
    scalar_document["analysis"]["certificate"] = {"M": 1.5, "omega": 0.8}
    cert = Experiment(scalar_document).certificate()
    assert cert.provenance == "user-supplied"
    assert (cert.M, cert.omega) == (1.5, 0.8)
    assert cert.check() and len(cert.evidence_times) > 0
    scalar_document["analysis"]["certificate"] = {"M": 1.0, "omega": 2.0}
    assert not Experiment(scalar_document).certificate().check()
    scalar_document["analysis"]["certificate"] = {"M": 1.5}
    with pytest.raises(ConfigError) as info:
        Experiment(scalar_document).certificate()
    assert info.value.key_path == "analysis.certificate.omega"


def test_bad_solver_settings(scalar_document):
    scalar_document["solver"]["dt"] = -1.0
    with pytest.raises(ConfigError) as info:
        Experiment(scalar_document).solver_config()
    assert info.value.key_path == "solver"
    scalar_document["solver"]["method"] = "euler"
    with pytest.raises(ConfigError) as info:
        Experiment(scalar_document).method
    assert info.value.key_path == "solver.method"
    scalar_document["solver"]["T"] = 0.0
    with pytest.raises(ConfigError):
        Experiment(scalar_document).horizon


@pytest.mark.parametrize("key, value", [
    ("dt", "0.01"),
    ("picard_tolerance", None),
    ("window_safety", [0.5]),
    ("picard_max_iterations", 50.5),
    ("picard_max_iterations", True),
])
def test_badly_typed_solver_settings_name_the_key(scalar_document, key, value):
    scalar_document["solver"][key] = value
    with pytest.raises(ConfigError) as info:
        Experiment(scalar_document).solver_config()
    assert info.value.key_path == f"solver.{key}"


def test_unknown_model_kind(scalar_document):
    scalar_document["model"]["kind"] = "plate"
    with pytest.raises(ConfigError) as info:
        Experiment(scalar_document).problem
    assert info.value.key_path == "model.kind"


def test_matrix_model_with_nonlinearity(scalar_document):
    doc = dict(scalar_document,
               model={"kind": "matrix", "A": [[-1.0, 1.0], [0.0, -2.0]], "B": [[0.0, 1.0], [1.0, 0.0]]},
               history={"kind": "constant", "value": [1.0, -1.0]},
               nonlinearity={"kind": "tanh", "lipschitz": 0.05})
    exp = Experiment(doc)
    assert exp.problem.dimension == 2
    assert exp.problem.lipschitz == 0.05
    assert exp.certificate().provenance == "estimated"


def test_wave_document(scalar_document):
    doc = dict(scalar_document,
               model={"kind": "wave", "nodes": 10, "damping": 1.0, "damping_region": [0.2, 0.8],
                      "delay_region": [0.3, 0.6]},
               delay={"kind": "constant", "value": 0.5},
               gain={"kind": "constant", "value": 0.05},
               history={"kind": "zero"})
    p = Experiment(doc).problem
    assert p.dimension == 20 and p.layout is not None
    assert np.all(p.initial_state == 0.0)
    doc["history"] = {"kind": "fields", "u": "sin(pi*x)", "v": "0"}
    p = Experiment(doc).problem
    assert np.max(np.abs(p.initial_state)) > 0
    doc["model"]["delay_region"] = [0.5, 1.5]
    with pytest.raises(ConfigError) as info:
        Experiment(doc).problem
    assert info.value.key_path == "model"


def test_from_file(tmp_path, write_config, scalar_document):
    exp = Experiment.from_file(write_config(scalar_document, "bench"))
    assert exp.name == "bench"
    with pytest.raises(ConfigError):
        Experiment.from_file(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{\"model\": ")
    with pytest.raises(ConfigError) as info:
        Experiment.from_file(broken)
    assert "invalid JSON" in str(info.value)
    assert json.loads(write_config(scalar_document).read_text()) == scalar_document


@pytest.mark.parametrize("path", sorted(SAMPLES.glob("*.json")), ids=lambda p: p.stem)
def test_sample_documents_build(path):
    exp = Experiment.from_file(path)
    assert exp.problem.dimension >= 1
    assert exp.horizon > 0
    exp.solver_config()
