"""TOML experiment configuration with field-level validation."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .core import ConfigError, SurrogateLoss
from .optim import StacoConfig

METHODS = ("staco1", "staco2", "ce", "auc_pairwise")

_num = (int, float)
# section -> key -> accepted types
SCHEMA = {
    "data": {"train": str, "test": str, "n_features": int, "train_frac": _num,
             "keep_frac": _num, "seed": int},
    "data.synth": {"n_pos": int, "n_neg": int, "d": int, "separation": _num, "seed": int,
                   "test_seed": int},
    "model": {"kind": str, "hidden": int, "bias": bool, "init_scale": _num},
    "method": {"name": str, "backend": str},
    "optim": {"theta0": _num, "theta1": _num, "loss": str, "margin": _num, "alpha": _num,
              "beta": _num, "eta": _num, "beta_prime": _num, "S": int, "B": int, "T": int,
              "K": int, "gamma": _num, "milestones": list, "decay_factor": _num,
              "weight_decay": _num, "eval_every": int, "record_time": bool},
    "eval": {"rates": list},
    "run": {"seeds": list, "workers": int, "out": str},
    "ablate": {"b_values": list, "gamma_values": list, "target": _num, "target_factor": _num,
               "reference_iters": int},
}


def _typename(t):
    return "number" if t is _num else t.__name__


def _check_section(name: str, table: dict):
    allowed = SCHEMA[name]
    for key, val in table.items():
        if name == "data" and key == "synth":
            continue
        if key not in allowed:
            raise ConfigError(f"{name}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})")
        want = allowed[key]
        ok = isinstance(val, want) and not (want is not bool and isinstance(val, bool))
        if not ok:
            raise ConfigError(f"{name}.{key}: expected {_typename(want)}, got {type(val).__name__}")
        if isinstance(val, float) and not math.isfinite(val) and key != "target":
            raise ConfigError(f"{name}.{key}: must be finite")


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=dict)
    synth: dict | None = None
    model: dict = field(default_factory=dict)
    method: str = "staco1"
    backend: str | None = None
    optim: StacoConfig = field(default_factory=StacoConfig)
    rates: tuple = ((0.5, 0.5), (0.75, 0.75))
    seeds: tuple = (0,)
    workers: int = 1
    out: str | None = None
    ablate: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def parse_config(raw: dict, base_dir=None) -> ExperimentConfig:
    for sec in raw:
        if sec not in SCHEMA:
            raise ConfigError(f"{sec}: unknown section (allowed: {', '.join(s for s in SCHEMA if '.' not in s)})")
        if not isinstance(raw[sec], dict):
            raise ConfigError(f"{sec}: expected a table")
        _check_section(sec, raw[sec])
    data = dict(raw.get("data", {}))
    synth = data.pop("synth", None)
    if synth is not None:
        if not isinstance(synth, dict):
            raise ConfigError("data.synth: expected a table")
        _check_section("data.synth", synth)
        for k in ("n_pos", "n_neg", "d"):
            if k not in synth:
                raise ConfigError(f"data.synth.{k}: required")
    elif "train" not in data:
        raise ConfigError("data.train: required unless [data.synth] is given")

    model = {"kind": "linear", "hidden": 8, "bias": False, "init_scale": 0.1}
    model.update(raw.get("model", {}))
    if model["kind"] not in ("linear", "mlp"):
        raise ConfigError(f"model.kind: expected 'linear' or 'mlp', got {model['kind']!r}")

    meth = raw.get("method", {})
    name = meth.get("name", "staco1")
    if name not in METHODS:
        raise ConfigError(f"method.name: expected one of {METHODS}, got {name!r}")
    backend = meth.get("backend")
    if backend not in (None, "cython", "python", "generic"):
        raise ConfigError(f"method.backend: unknown backend {backend!r}")

    o = dict(raw.get("optim", {}))
    try:
        loss = SurrogateLoss(o.pop("loss", "squared_hinge"), float(o.pop("margin", 0.5)))
    except ValueError as e:
        raise ConfigError(f"optim.loss: {e}") from None
    milestones = o.pop("milestones", [])
    if not all(isinstance(m, int) and not isinstance(m, bool) for m in milestones):
        raise ConfigError("optim.milestones: expected a list of integers")
    kw = {k: (float(v) if isinstance(v, int) and SCHEMA["optim"][k] is _num else v) for k, v in o.items()}
    optim = StacoConfig(loss=loss, decay_milestones=tuple(milestones), **kw)

    rates = raw.get("eval", {}).get("rates", [[0.5, 0.5], [0.75, 0.75]])
    try:
        rates = tuple((float(a), float(b)) for a, b in rates)
    except (TypeError, ValueError):
        raise ConfigError("eval.rates: expected a list of [theta0, theta1] pairs") from None
    for a, b in rates:
        if not (0 < a <= 1 and 0 < b <= 1):
            raise ConfigError(f"eval.rates: rates must lie in (0, 1], got [{a}, {b}]")

    run = raw.get("run", {})
    seeds = run.get("seeds", [0])
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("run.seeds: expected a non-empty list of integers")
    workers = run.get("workers", 1)
    if workers < 1:
        raise ConfigError("run.workers: must be >= 1")

    ablate = dict(raw.get("ablate", {}))
    if "target" in ablate and "target_factor" in ablate:
        raise ConfigError("ablate: give either target or target_factor, not both")

    return ExperimentConfig(data=data, synth=synth, model=model, method=name, backend=backend,
                            optim=optim, rates=rates, seeds=tuple(seeds), workers=workers,
                            out=run.get("out"), ablate=ablate,
                            base_dir=Path(base_dir) if base_dir else Path.cwd())


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {e}") from None
    return parse_config(raw, base_dir=path.parent)
