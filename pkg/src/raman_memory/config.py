"""Run configuration: defaults, JSON files, environment and dotted overrides."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os

from .experiments import ControlSetup, SweepSpec, reference_params
from .memory_dynamics import MemoryParams
from .quantum_states import ChannelParams
from .tomography import MLConfig

__all__ = ["ConfigError", "RunConfig", "default_config", "load_config", "ENV_PREFIX"]

ENV_PREFIX = "RAMAN_MEMORY__"


class ConfigError(ValueError):
    pass


def _fields(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def default_config() -> dict:
    ml = _fields(MLConfig())
    ml.update(n_samples=100_000, n_bar=0.76, recentre=False)
    return {
        "memory": _fields(reference_params()),
        "control": _fields(ControlSetup()),
        "channel": _fields(ChannelParams.reference()),
        "tomography": ml,
        "sweep": {
            "kind": "write_energy",
            "points": [0.01, 0.02, 0.04, 0.08, 0.16],
            "control_mode": "optimal",
            "tomography": False,
            "n_bar": 0.76,
        },
        "seed": 0,
        "output_dir": "results",
        "jobs": 1,
    }


# keys whose default is None but which take a number when set
_OPTIONAL_NUMBERS = {
    ("memory", "t_read"): float,
    ("memory", "nt_read"): int,
    ("control", "input_rise"): float,
    ("control", "kappa"): float,
    ("tomography", "x_range"): float,
}


def _coerce(path: tuple, value, default):
    name = ".".join(path)
    if path in _OPTIONAL_NUMBERS:
        if value is None:
            return None
        typ = _OPTIONAL_NUMBERS[path]
        default = typ(0)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name}: expected true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"{name}: expected a list of numbers, got {value!r}")
        return [float(v) for v in value]
    return value


def _merge(base: dict, update: dict, prefix=()) -> None:
    for key, value in update.items():
        path = prefix + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(path)!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(path)}: expected a block of keys")
            _merge(base[key], value, path)
        else:
            base[key] = _coerce(path, value, base[key])


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _dotted(key: str, value) -> dict:
    parts = key.split(".")
    out = cur = {}
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return out


@dataclasses.dataclass
class RunConfig:
    memory: MemoryParams
    control: ControlSetup
    channel: ChannelParams
    ml: MLConfig
    n_samples: int
    n_bar: float
    recentre: bool
    sweep: SweepSpec
    seed: int
    output_dir: str
    jobs: int
    raw: dict

    @property
    def hash(self) -> str:
        """Hash of everything that affects results (seed, paths and jobs excluded)."""
        doc = {k: v for k, v in self.raw.items() if k not in ("seed", "output_dir", "jobs")}
        text = json.dumps(doc, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def provenance(self) -> dict:
        return {"config_hash": self.hash, "seed": self.seed}


def _build(raw: dict) -> RunConfig:
    def make(block, cls, keys=None):
        kw = raw[block] if keys is None else {k: raw[block][k] for k in keys}
        try:
            return cls(**kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid {block} block: {exc}") from exc

    memory = make("memory", MemoryParams)
    control = make("control", ControlSetup)
    channel = make("channel", ChannelParams)
    ml = make("tomography", MLConfig, [f.name for f in dataclasses.fields(MLConfig)])
    tomo = raw["tomography"]
    if tomo["n_samples"] < 1:
        raise ConfigError("tomography.n_samples must be >= 1")
    if tomo["n_bar"] < 0:
        raise ConfigError("tomography.n_bar must be >= 0")
    if raw["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")
    sw = raw["sweep"]
    try:
        sweep = SweepSpec(
            kind=sw["kind"],
            points=tuple(sw["points"]),
            memory=memory,
            channel=channel,
            control_mode=sw["control_mode"],
            setup=control,
            seed=raw["seed"],
            tomography=sw["tomography"],
            ml=ml,
            n_samples=tomo["n_samples"],
            n_bar=sw["n_bar"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid sweep block: {exc}") from exc
    return RunConfig(
        memory,
        control,
        channel,
        ml,
        tomo["n_samples"],
        tomo["n_bar"],
        tomo["recentre"],
        sweep,
        raw["seed"],
        raw["output_dir"],
        raw["jobs"],
        raw,
    )


def load_config(path=None, overrides=(), env=None, **explicit) -> RunConfig:
    """Resolve a configuration.

    Precedence, lowest first: defaults, the JSON file at ``path``,
    environment variables ``RAMAN_MEMORY__BLOCK__KEY``, ``overrides`` given as
    ``"block.key=value"`` strings, then keyword arguments that are not None.
    Unknown keys raise ``ConfigError``.
    """
    raw = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        _merge(raw, doc)
    env = os.environ if env is None else env
    for name in sorted(env):
        if name.startswith(ENV_PREFIX):
            key = ".".join(p.lower() for p in name[len(ENV_PREFIX) :].split("__"))
            _merge(raw, _dotted(key, _parse_value(env[name])))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        _merge(raw, _dotted(key.strip(), _parse_value(text)))
    _merge(raw, {k: v for k, v in explicit.items() if v is not None})
    return _build(copy.deepcopy(raw))
