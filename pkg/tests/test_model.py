import math
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from blowuplab import expr as ex
from blowuplab.errors import ConfigError
from blowuplab.lyapunov import TabulatedCandidate
from blowuplab.model import (JumpSpec, RegionSpec, StateDomain, builtin_candidates, load_model,
                             load_model_file)


def test_quadratic_drift_unit_noise_loads():
    m = load_model({"dim": 1, "drift": ["x^2"], "diffusion": ["1"]})
    assert m.dim == 1 and m.noise_dim == 1 and m.jumps is None
    assert m.b(np.array([3.0]))[0] == 9.0
    assert m.sigma2(np.array([3.0]))[0] == 1.0
    assert m.domain.kind == "full_line"


def test_quintic_noise_loads():
    m = load_model("dim: 1\ndrift: ['x^2']\ndiffusion: ['x^5']")
    assert m.sigma2(np.array([2.0]))[0] == 2.0 ** 10


def test_diffusion_row_mismatch_is_config_error():
    with pytest.raises(ConfigError) as err:
        load_model({"dim": 2, "drift": ["0", "0"], "diffusion": [["1"], ["1"], ["1"]]})
    assert err.value.key == "diffusion"


@pytest.mark.parametrize("cfg, key", [
    ({"drift": ["x"], "diffusion": ["1"]}, "dim"),
    ({"dim": 1, "diffusion": ["1"]}, "drift"),
    ({"dim": 1, "drift": ["x"]}, "diffusion"),
    ({"dim": 1, "drift": ["y"], "diffusion": ["1"]}, "drift[0]"),
    ({"dim": 1, "drift": ["x"], "diffusion": ["1"], "colour": 3}, "colour"),
    ({"dim": 1, "drift": ["x"], "diffusion": ["1"], "domain": {"kind": "interval", "l": 2, "r": 1}},
     "domain"),
    ({"dim": 1, "drift": ["x"], "diffusion": ["1"],
      "jumps": {"lambda": 1, "dist": "lognormal", "dist_params": {"mu": 0, "sigma": -1}}}, "jumps"),
    ({"dim": 1, "drift": ["x"], "diffusion": ["1"],
      "jumps": {"lambda": 0, "dist": "normal", "dist_params": {"mu": 0, "sigma": 1}}}, "jumps"),
    ({"dim": 1, "drift": ["x"], "diffusion": ["1"], "params": {"a": "b"}}, "params"),
])
def test_config_errors_name_the_key(cfg, key):
    with pytest.raises(ConfigError) as err:
        load_model(cfg)
    assert err.value.key == key


def test_invalid_yaml_is_config_error():
    with pytest.raises(ConfigError):
        load_model("dim: [1")


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_model_file(tmp_path / "nope.yaml")


_schema_value = st.one_of(st.none(), st.integers(-2, 4), st.text(max_size=6),
                          st.lists(st.sampled_from(["x", "1", "x^2", "q"]), max_size=3))


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from(["dim", "drift", "diffusion", "domain", "params", "jumps"]),
                       _schema_value))
def test_loader_is_total(cfg):
    try:
        load_model(cfg)
    except ConfigError as err:
        assert err.key is not None


def test_loading_twice_gives_equal_models():
    text = "dim: 2\nparams: {a: 1.5}\ndrift: ['a*x1', '-x2']\ndiffusion: [['norm(x)', '0'], ['0', '1']]"
    a, b = load_model(text), load_model(text)
    assert a == b and a.digest() == b.digest()


def test_diffusion_matrix_and_covariance():
    m = load_model({"dim": 2, "drift": ["0", "0"], "diffusion": [["x1", "1", "0"], ["0", "x2", "2"]]})
    X = np.array([[2.0, 3.0]])
    S = m.diffusion_at(X)[0]
    assert S.shape == (2, 3)
    assert np.allclose(m.a_at(X)[0], S @ S.T)


def test_merton_jump_spec():
    j = JumpSpec(1.0, "lognormal", (("mu", 0.0), ("sigma", 0.3)), "merton")
    assert j.moment(2) == pytest.approx(math.exp(2 * 0.09))
    X = np.array([[2.0]])
    assert j.apply_to(X, np.array([1.5]))[0, 0] == 3.0


def test_normal_moments():
    j = JumpSpec(1.0, "normal", (("mu", 0.5), ("sigma", 2.0)))
    assert j.moment(1) == 0.5
    assert j.moment(2) == pytest.approx(0.25 + 4.0)
    assert j.moment(4) == pytest.approx(0.5 ** 4 + 6 * 0.25 * 4 + 3 * 16)


def test_region_ordering():
    with pytest.raises(ValueError):
        RegionSpec(4.0, 3.0, 10.0)
    with pytest.raises(ValueError):
        StateDomain.make("interval", 1.0, 1.0)


def test_builtin_candidates_three_d_has_log_squared_norm():
    m = load_model({"dim": 3, "drift": ["0"] * 3, "diffusion": [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]]})
    names = {c.name for c in builtin_candidates(m)}
    assert "log_squared_norm" in names
    c = next(c for c in builtin_candidates(m) if c.name == "log_squared_norm")
    assert c.v == ex.parse("ln(norm(x)^2)", dim=3)


def test_builtin_candidates_include_square_without_singularities():
    m = load_model({"dim": 1, "drift": ["x"], "diffusion": ["1"]})
    sq = next(c for c in builtin_candidates(m) if c.name == "squared_norm")
    assert sq.singular_points == ()
    assert ex.evaluate(sq.v, 3.0) == 9.0


def test_drift_integral_candidate_for_quadratic_drift():
    m = load_model({"dim": 1, "drift": ["x^2"], "diffusion": ["1"]})
    tab = [c for c in builtin_candidates(m) if isinstance(c, TabulatedCandidate)]
    assert len(tab) == 1
    x = np.array([1.0, 1.5, 3.0, 10.0, 1e3])
    assert np.max(np.abs(tab[0].value(x) - (1 - 1 / x))) <= 1e-9


def test_gallery_merton_config_loads():
    path = Path(__file__).parents[1] / "src/blowuplab/gallery/merton_jump_diffusion.yaml"
    assert load_model(yaml.safe_load(path.read_text())).jumps.apply == "merton"
