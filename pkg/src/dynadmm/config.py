"""INI run configurations and the scenarios they describe.

A configuration has an ``[instance]`` section naming the problem family
(``kind``) and its parameters, an ``[admm]`` section with solver settings
and an optional ``[tuning]`` section for the penalty certificate::

    [instance]
    kind = synthetic
    n = 5
    seed = 0

    [admm]
    rho = 1.0
    eta = 0.3
    max_iter = 500
    kkt_tol = none

Vector-valued ``rho``, ``eta`` and ``xi`` accept comma-separated lists.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .admm import AdmmParams
from .burgers import BurgersConfig, make_implicit_problem
from .errors import ConfigurationError, DynAdmmError
from .instances import lq_control_instance, lq_instance, synthetic_instance
from .lorenz import LorenzConfig, admm_init_4dvar, make_4dvar_problem
from .tuning import choose_penalties, default_box, estimate_constants

__all__ = ["RunConfig", "Scenario", "load_config", "parse_config", "bundled_config",
           "build_scenario", "certify_scenario"]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() == "none" else float(text)


def _floats(text):
    vals = [float(v) for v in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


def _triple(text):
    vals = tuple(float(v) for v in text.split(","))
    if len(vals) != 3:
        raise ValueError("expected three comma-separated numbers")
    return vals


INSTANCE_KEYS = {
    "lorenz4dvar": {"sigma": float, "rho_l": float, "beta": float, "dt": float, "T": float,
                    "stride": int, "alpha": float, "seed": int, "noise_scale": float,
                    "truth_start": _triple},
    "burgers": {"nu": float, "T": float, "m": int, "dt": float},
    "synthetic": {"n": int, "d": int, "seed": int, "contraction": float, "degenerate": _bool},
    "lq": {"n": int, "d": int, "seed": int, "norm": float},
    "lq-control": {"n": int, "d": int, "m": int, "seed": int, "norm": float},
}

ADMM_KEYS = {
    "rho": _floats, "eta": _floats, "xi": _floats, "max_iter": int,
    "step_tol": _opt_float, "feas_tol": _opt_float, "kkt_tol": _opt_float,
    "subsolver": str, "inner_tol": float, "inner_relative": _bool, "inner_max_iter": int,
}

TUNING_KEYS = {
    "eta": _floats, "margin": float, "samples": int, "box_factor": float,
    "level_set_floor": _bool, "rho_ref": float, "seed": int,
}

SECTIONS = {"instance", "admm", "tuning"}


@dataclass
class RunConfig:
    """Typed contents of a configuration file."""

    kind: str
    instance: dict
    admm: dict = field(default_factory=dict)
    tuning: dict = field(default_factory=dict)
    source: str = "<string>"

    def admm_params(self, **overrides):
        kw = dict(self.admm)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return AdmmParams(**kw)
        except DynAdmmError as err:
            raise ConfigurationError(f"{self.source}: {err}") from err

    def snapshot(self):
        """Plain dictionary for manifests."""
        conv = lambda d: {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
        return {"kind": self.kind, "instance": conv(self.instance), "admm": conv(self.admm),
                "tuning": conv(self.tuning)}


def _typed(section, raw, schema, source):
    out = {}
    for key, text in raw.items():
        if key not in schema:
            raise ConfigurationError(f"{source}: unknown key {key!r} in [{section}]")
        try:
            out[key] = schema[key](text)
        except ValueError as err:
            raise ConfigurationError(f"{source}: bad value for {section}.{key}: {err}") from err
    return out


def parse_config(text, source="<string>"):
    """Parse configuration text into a :class:`RunConfig`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigurationError(f"{source}: {err}") from err
    extra = set(cp.sections()) - SECTIONS
    if extra:
        raise ConfigurationError(f"{source}: unknown section(s) {sorted(extra)}")
    if not cp.has_section("instance") or "kind" not in cp["instance"]:
        raise ConfigurationError(f"{source}: missing [instance] kind")
    inst = dict(cp["instance"])
    kind = inst.pop("kind").strip()
    if kind not in INSTANCE_KEYS:
        raise ConfigurationError(f"{source}: unknown instance kind {kind!r}")
    sections = {s: dict(cp[s]) if cp.has_section(s) else {} for s in ("admm", "tuning")}
    return RunConfig(
        kind=kind,
        instance=_typed("instance", inst, INSTANCE_KEYS[kind], source),
        admm=_typed("admm", sections["admm"], ADMM_KEYS, source),
        tuning=_typed("tuning", sections["tuning"], TUNING_KEYS, source),
        source=source,
    )


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from err
    return parse_config(text, source=str(path))


def bundled_config(name):
    """One of the configurations shipped with the package, by stem."""
    ref = resources.files("dynadmm") / "configs" / f"{name}.ini"
    if not ref.is_file():
        raise ConfigurationError(f"no bundled config named {name!r}")
    return parse_config(ref.read_text(), source=f"bundled:{name}")


@dataclass
class Scenario:
    """A problem with its starting point and any reference data."""

    problem: object
    x0: object
    lam0: object = None
    data: object = None
    oracle: object = None


def build_scenario(cfg):
    """Instantiate the problem described by ``cfg``."""
    kw = dict(cfg.instance)
    try:
        if cfg.kind == "lorenz4dvar":
            problem, data = make_4dvar_problem(LorenzConfig(**kw))
            x0, lam0 = admm_init_4dvar(problem, data)
            return Scenario(problem, x0, lam0, data=data)
        if cfg.kind == "burgers":
            bc = BurgersConfig(scheme="admm", **kw)
            problem = make_implicit_problem(bc)
            return Scenario(problem, np.zeros((problem.n + 1, problem.d)), data=bc)
        if cfg.kind == "synthetic":
            problem = synthetic_instance(**kw)
            return Scenario(problem, np.zeros((problem.n + 1, problem.d)))
        if cfg.kind == "lq":
            inst = lq_instance(**kw)
            return Scenario(inst.problem, np.zeros((inst.problem.n + 1, inst.problem.d)),
                            oracle=inst)
        inst = lq_control_instance(**kw)
        return Scenario(inst.problem, None, oracle=inst)
    except TypeError as err:
        raise ConfigurationError(f"{cfg.source}: {err}") from err


def certify_scenario(cfg, scenario):
    """Estimate constants around the scenario's start and choose certified penalties.

    Returns ``(SmoothnessConstants, Certificate, (lo, hi))`` using the
    ``[tuning]`` settings of ``cfg``; the last item is the sampling box.
    """
    t = cfg.tuning
    x_init = scenario.x0
    lo, hi = default_box(x_init, t.get("box_factor", 3.0))
    consts = estimate_constants(scenario.problem, (lo, hi), samples=t.get("samples", 200),
                                rng=np.random.default_rng(t.get("seed", 0)),
                                rho_ref=t.get("rho_ref", 1.0), x_init=x_init)
    cert = choose_penalties(consts, t.get("eta", 1.0), margin=t.get("margin", 0.9),
                            level_set_floor=t.get("level_set_floor", True))
    return consts, cert, (lo, hi)
