"""JSON experiment configuration: parsing, validation and defaults.

A config is one JSON object. Every section is optional except ``target``;
missing entries take the defaults below, and :func:`load_config` returns
the fully materialized dictionary alongside the typed objects so a run can
echo exactly what it used. Example::

    {
      "name": "attainable",
      "grid": {"x_min": 0, "x_max": 12, "M": 241, "N": 100},
      "market": {"mu": 0.1, "sigma": 0.1},
      "initial": {"x0": 5},
      "target": {"type": "normal", "mean": 6, "sd": 1},
      "cost": {"type": "quadratic_shift", "box": {"A_max": 6, "B_min": -3, "B_max": 3}},
      "penalty": {"type": "indicator"}
    }
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import model
from .numerics import Grid
from .optimizer import Problem, Tolerances


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


DEFAULTS = {
    "name": "run",
    "grid": {"x_min": 0.0, "x_max": 12.0, "M": 241, "N": 100},
    "market": {"mu": 0.1, "sigma": 0.1, "nu_schedule": None},
    "initial": {"x0": 5.0, "mollifier_width": 2.0},
    "cost": {"type": "quadratic_shift"},
    "penalty": {"type": "indicator"},
    "optimizer": asdict(Tolerances()),
    "solver": {"fp_scheme": "implicit", "stencil": "upwind", "cfl_safety": 0.9},
    "montecarlo": {"enabled": False, "n_paths": 100000, "seed": 42},
    "output": {"directory": None, "snapshot_times": [0.0, 0.25, 0.5, 0.75, 1.0]},
}

_BOX_DEFAULTS = asdict(model.ControlBox())
_COST_DEFAULTS = {
    "quadratic_shift": {"a_center": 0.2, "b_center": 0.2, "box": _BOX_DEFAULTS},
    "cash_input": {"w": 0.01, "l": 0.01, "K": None, "K_schedule": None, "box": _BOX_DEFAULTS},
}
_PENALTY_DEFAULTS = {
    "indicator": {"tol": 1e-6},
    "squared_l2": {"lam": 1.0},
    "kl": {"lam": 1.0},
}
_TARGET_KEYS = {
    "normal": ("mean", "sd"),
    "weibull": ("shape", "scale"),
    "tabulated": ("nodes", "values"),
    "point_mass": ("location",),
    "mixture": ("weights", "components"),
}


@dataclass
class MonteCarloConfig:
    enabled: bool = False
    n_paths: int = 100000
    seed: int = 42


@dataclass
class ExperimentConfig:
    name: str
    grid: Grid
    market: model.MarketParams
    x0: float
    mollifier_width: float
    target: model.TargetDistribution
    cost: model.CostSpec
    penalty: model.PenaltySpec
    tol: Tolerances
    fp_scheme: str
    stencil: str
    cfl_safety: float
    montecarlo: MonteCarloConfig
    output_dir: str | None
    snapshot_times: list
    materialized: dict = field(default_factory=dict)

    def problem(self) -> Problem:
        return Problem(
            grid=self.grid,
            market=self.market,
            x0=self.x0,
            target=model.target_density(self.target, self.grid),
            cost=self.cost,
            penalty=self.penalty,
            tol=self.tol,
            mollifier_width=self.mollifier_width,
            fp_scheme=self.fp_scheme,
            stencil=self.stencil,
            cfl_safety=self.cfl_safety,
        )


def _merge(path, given, defaults):
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(defaults.get(k), dict):
            out[k] = _merge(f"{path}.{k}", v, defaults[k])
        else:
            out[k] = v
    return out


def _typed(path, section, table):
    if not isinstance(section, dict) or "type" not in section:
        raise ConfigError(f"{path}.type: missing")
    kind = section["type"]
    if kind not in table:
        raise ConfigError(f"{path}.type: unknown value {kind!r}; expected one of {sorted(table)}")
    rest = {k: v for k, v in section.items() if k != "type"}
    return kind, _merge(path, rest, table[kind])


def _num(path, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return kind(value)


def _wrap(path, build, *args, **kw):
    try:
        return build(*args, **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _target(path, spec):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{path}.type: missing")
    kind = spec["type"]
    if kind not in _TARGET_KEYS:
        raise ConfigError(f"{path}.type: unknown value {kind!r}; expected one of {sorted(_TARGET_KEYS)}")
    keys = _TARGET_KEYS[kind]
    extra = set(spec) - set(keys) - {"type"}
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}: unknown field")
    for k in keys:
        if k not in spec:
            raise ConfigError(f"{path}.{k}: missing")
    if kind == "normal":
        return _wrap(path, model.Normal, _num(f"{path}.mean", spec["mean"]), _num(f"{path}.sd", spec["sd"]))
    if kind == "weibull":
        return _wrap(path, model.Weibull, _num(f"{path}.shape", spec["shape"]), _num(f"{path}.scale", spec["scale"]))
    if kind == "tabulated":
        return _wrap(path, model.Tabulated, tuple(spec["nodes"]), tuple(spec["values"]))
    if kind == "point_mass":
        return model.PointMass(_num(f"{path}.location", spec["location"]))
    comps = spec["components"]
    if not isinstance(comps, list):
        raise ConfigError(f"{path}.components: expected a list")
    parts = tuple(_target(f"{path}.components[{i}]", c) for i, c in enumerate(comps))
    return _wrap(path, model.Mixture, tuple(float(w) for w in spec["weights"]), parts)


def _box(path, spec):
    return _wrap(path, model.ControlBox, *(_num(f"{path}.{k}", spec[k]) for k in ("A_max", "B_min", "B_max")))


def _cost(path, section):
    kind, spec = _typed(path, section, _COST_DEFAULTS)
    box = _box(f"{path}.box", spec["box"])
    if kind == "quadratic_shift":
        cost = model.QuadraticShift(
            _num(f"{path}.a_center", spec["a_center"]), _num(f"{path}.b_center", spec["b_center"]), box
        )
        return cost, {"type": kind, **spec}
    if (spec["K"] is None) == (spec["K_schedule"] is None):
        raise ConfigError(f"{path}.K: give exactly one of K and K_schedule")
    if spec["K"] is not None:
        sched = _wrap(f"{path}.K", model.KSchedule.constant, _num(f"{path}.K", spec["K"]))
    else:
        segs = spec["K_schedule"]
        if not isinstance(segs, list) or not all(isinstance(s, list) and len(s) == 3 for s in segs):
            raise ConfigError(f"{path}.K_schedule: expected a list of [t_start, t_end, K]")
        sched = _wrap(f"{path}.K_schedule", model.KSchedule, tuple(tuple(float(v) for v in s) for s in segs))
    cost = _wrap(path, model.CashInputPiecewise, sched, _num(f"{path}.w", spec["w"]), _num(f"{path}.l", spec["l"]), box)
    return cost, {"type": kind, **spec}


def _penalty(path, section):
    kind, spec = _typed(path, section, _PENALTY_DEFAULTS)
    if kind == "indicator":
        pen = _wrap(path, model.Indicator, _num(f"{path}.tol", spec["tol"]))
    elif kind == "squared_l2":
        pen = _wrap(path, model.SquaredL2, _num(f"{path}.lam", spec["lam"]))
    else:
        pen = _wrap(path, model.KullbackLeibler, _num(f"{path}.lam", spec["lam"]))
    return pen, {"type": kind, **spec}


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config dictionary and materialize its defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    if "target" not in raw:
        raise ConfigError("target: missing")
    unknown = set(raw) - set(DEFAULTS) - {"target"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
    m = {}
    m["name"] = str(raw.get("name", DEFAULTS["name"]))
    for key in ("grid", "market", "initial", "optimizer", "solver", "montecarlo", "output"):
        m[key] = _merge(key, raw.get(key), DEFAULTS[key])

    g = m["grid"]
    grid = _wrap(
        "grid",
        Grid,
        _num("grid.x_min", g["x_min"]),
        _num("grid.x_max", g["x_max"]),
        _num("grid.M", g["M"], int),
        _num("grid.N", g["N"], int),
    )
    mk = m["market"]
    nu = mk["nu_schedule"]
    market = _wrap(
        "market",
        model.MarketParams,
        _num("market.mu", mk["mu"]),
        _num("market.sigma", mk["sigma"]),
        None if nu is None else tuple(float(v) for v in nu),
    )
    if nu is not None:
        _wrap("market.nu_schedule", market.nu_levels, grid)

    ini = m["initial"]
    x0 = _num("initial.x0", ini["x0"])
    width = _num("initial.mollifier_width", ini["mollifier_width"])
    if not grid.x_min <= x0 <= grid.x_max:
        raise ConfigError(f"initial.x0: {x0} lies outside the grid")
    if width < 0:
        raise ConfigError("initial.mollifier_width: must be nonnegative")

    target = _target("target", raw["target"])
    _wrap("target", model.target_density, target, grid)
    m["target"] = copy.deepcopy(raw["target"])
    cost, m["cost"] = _cost("cost", raw.get("cost", DEFAULTS["cost"]))
    penalty, m["penalty"] = _penalty("penalty", raw.get("penalty", DEFAULTS["penalty"]))

    opt = m["optimizer"]
    tol_kw = {}
    for f in fields(Tolerances):
        tol_kw[f.name] = _num(f"optimizer.{f.name}", opt[f.name], type(f.default))
        if tol_kw[f.name] < 0 or (tol_kw[f.name] == 0 and f.name not in ("max_backtracks", "precond_length")):
            raise ConfigError(f"optimizer.{f.name}: must be positive")

    sv = m["solver"]
    if sv["fp_scheme"] not in ("implicit", "explicit"):
        raise ConfigError("solver.fp_scheme: expected 'implicit' or 'explicit'")
    if sv["stencil"] not in ("upwind", "central"):
        raise ConfigError("solver.stencil: expected 'upwind' or 'central'")
    cfl = _num("solver.cfl_safety", sv["cfl_safety"])
    if not 0 < cfl <= 1:
        raise ConfigError("solver.cfl_safety: must lie in (0, 1]")

    mc = m["montecarlo"]
    if not isinstance(mc["enabled"], bool):
        raise ConfigError("montecarlo.enabled: expected true or false")
    mcc = MonteCarloConfig(mc["enabled"], _num("montecarlo.n_paths", mc["n_paths"], int), _num("montecarlo.seed", mc["seed"], int))
    if mcc.n_paths < 1:
        raise ConfigError("montecarlo.n_paths: must be at least 1")

    out = m["output"]
    times = out["snapshot_times"]
    if not isinstance(times, list) or not all(isinstance(t, (int, float)) and 0 <= t <= 1 for t in times):
        raise ConfigError("output.snapshot_times: expected a list of times in [0, 1]")

    return ExperimentConfig(
        name=m["name"],
        grid=grid,
        market=market,
        x0=x0,
        mollifier_width=width,
        target=target,
        cost=cost,
        penalty=penalty,
        tol=Tolerances(**tol_kw),
        fp_scheme=sv["fp_scheme"],
        stencil=sv["stencil"],
        cfl_safety=cfl,
        montecarlo=mcc,
        output_dir=out["directory"],
        snapshot_times=[float(t) for t in times],
        materialized=m,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)


def with_override(cfg: ExperimentConfig, param: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with ``lambda`` (penalty strength) or ``K`` (constant cash-input price) replaced."""
    raw = copy.deepcopy(cfg.materialized)
    if param == "lambda":
        if raw["penalty"]["type"] not in ("squared_l2", "kl"):
            raise ConfigError("penalty.lam: sweeping lambda needs a squared_l2 or kl penalty")
        raw["penalty"]["lam"] = float(value)
    elif param == "K":
        if raw["cost"]["type"] != "cash_input":
            raise ConfigError("cost.K: sweeping K needs a cash_input cost")
        raw["cost"]["K"] = float(value)
        raw["cost"]["K_schedule"] = None
    else:
        raise ConfigError(f"sweep parameter {param!r}: expected 'lambda' or 'K'")
    raw["name"] = f"{cfg.name}_{param}{value:g}"
    return parse_config(raw)
