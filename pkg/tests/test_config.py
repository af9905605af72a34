import numpy as np
import pytest

from dynadmm.config import build_scenario, bundled_config, load_config, parse_config
from dynadmm.errors import ConfigurationError
from dynadmm.problem import ControlledProblem


def test_parse_types():
    cfg = parse_config("[instance]\nkind = synthetic\nn = 3\ndegenerate = yes\n"
                       "[admm]\nrho = 1, 2, 3\neta = 0.5\nkkt_tol = none\n")
    assert cfg.kind == "synthetic"
    assert cfg.instance == {"n": 3, "degenerate": True}
    assert cfg.admm == {"rho": [1.0, 2.0, 3.0], "eta": 0.5, "kkt_tol": None}
    assert cfg.tuning == {}


@pytest.mark.parametrize("text", [
    "[instance]\nkind = lq\n[extra]\na = 1\n",
    "[instance]\nkind = lq\nfoo = 1\n",
    "[instance]\nkind = lq\n[admm]\nspeed = 3\n",
    "[instance]\nkind = nope\n",
    "[admm]\nrho = 1\n",
    "[instance]\nkind = lq\nn = three\n",
    "[instance]\nkind = synthetic\ndegenerate = maybe\n",
    "not an ini file",
])
def test_rejects_bad_text(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_bad_admm_values_surface_as_configuration_errors():
    cfg = parse_config("[instance]\nkind = lq\n[admm]\nmax_iter = -1\n")
    with pytest.raises(ConfigurationError):
        cfg.admm_params()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.ini")
    with pytest.raises(ConfigurationError):
        bundled_config("absent")


@pytest.mark.parametrize("name", ["lorenz4dvar", "burgers", "synthetic", "lq"])
def test_bundled_configs_build(name):
    cfg = bundled_config(name)
    sc = build_scenario(cfg)
    assert sc.x0.shape == (sc.problem.n + 1, sc.problem.d)
    cfg.admm_params()


def test_control_scenario():
    cfg = parse_config("[instance]\nkind = lq-control\nn = 3\nd = 2\nm = 1\n")
    sc = build_scenario(cfg)
    assert isinstance(sc.problem, ControlledProblem) and sc.x0 is None


def test_unknown_constructor_argument_rejected():
    cfg = parse_config("[instance]\nkind = lq\n")
    cfg.instance["bogus"] = 1
    with pytest.raises(ConfigurationError):
        build_scenario(cfg)


def test_snapshot_is_plain():
    cfg = bundled_config("lorenz4dvar")
    snap = cfg.snapshot()
    assert snap["kind"] == "lorenz4dvar"
    assert all(not isinstance(v, (tuple, np.ndarray)) for v in snap["instance"].values())
