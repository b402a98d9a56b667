"""Experiment configuration: flat dotted keys in a TOML file.

Every key is optional; omitted keys take the full-scale defaults. Example::

    Q = 7
    N = 3
    schemes = ["du", "cu"]
    leakage = "traffic"
    traffic.mode = "hotspots"
    traffic.P_h = 0.5
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .evaluation import SCHEMES, RunSettings
from .geometry import NetworkConfig
from .leakage import METHODS, LeakageMethod

# config key -> (section, attribute, type)
KEYS = {
    "Q": ("network", "Q", int),
    "N": ("network", "N", int),
    "M": ("network", "M", int),
    "cell_radius": ("network", "cell_radius", float),
    "user_density": ("network", "user_density", float),
    "du_exclusion_radius": ("network", "du_exclusion_radius", float),
    "rho": ("network", "rho", float),
    "tau_p": ("network", "tau_p", int),
    "tau_d": ("network", "tau_d", int),
    "p_du_dbm": ("network", "p_du_dbm", float),
    "p_user_dbm": ("network", "p_user_dbm", float),
    "noise_psd_dbm_hz": ("network", "noise_psd_dbm_hz", float),
    "noise_figure_db": ("network", "noise_figure_db", float),
    "bandwidth_hz": ("network", "bandwidth_hz", float),
    "shadowing_sigma_db": ("network", "shadowing_sigma_db", float),
    "seed": ("network", "seed", int),
    "traffic.mode": ("network", "traffic_mode", str),
    "traffic.P_h": ("network", "hotspot_prob", float),
    "traffic.sigma_h": ("network", "hotspot_sigma", float),
    "traffic.n_hotspots_min": ("network", "n_hotspots_min", int),
    "traffic.n_hotspots_max": ("network", "n_hotspots_max", int),
    "slots": ("run", "slots", int),
    "realizations": ("run", "realizations", int),
    "average_last": ("run", "average_last", int),
    "fairness.eta": ("run", "eta", float),
    "fairness.rate_floor": ("run", "rate_floor", float),
    "fairness.mode": ("run", "fairness", str),
    "estimation": ("run", "estimation", str),
    "max_iter": ("run", "max_iter", int),
    "tol": ("run", "tol", float),
    "trace": ("run", "trace", bool),
    "integration.outer_radius": ("leak", "outer_radius", float),
    "integration.inner_radius": ("leak", "inner_radius", float),
    "integration.exclusion": ("leak", "exclusion", float),
    "integration.grid": ("leak", "grid", float),
    "schemes": ("top", "schemes", list),
    "leakage": ("top", "leakage", list),
}


@dataclass(frozen=True)
class TrafficSettings:
    """Traffic-density parameters; hotspot centers are drawn per realization."""

    mode: str
    P_h: float
    sigma_h: float
    n_hotspots_min: int
    n_hotspots_max: int


@dataclass
class ExperimentSpec:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    run: RunSettings = field(default_factory=RunSettings)
    schemes: list = field(default_factory=lambda: ["du", "cu", "zf", "conjugate"])
    leakage: list = field(default_factory=lambda: [LeakageMethod("standard")])

    def __post_init__(self):
        if not self.schemes:
            raise ValueError("schemes: at least one scheme is required")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"schemes: unknown scheme {s!r}; choose from {SCHEMES}")
        if not self.leakage:
            raise ValueError("leakage: at least one method is required")

    @property
    def seed(self) -> int:
        return self.network.seed

    @property
    def traffic(self) -> TrafficSettings:
        n = self.network
        return TrafficSettings(n.traffic_mode, n.hotspot_prob, n.hotspot_sigma,
                               n.n_hotspots_min, n.n_hotspots_max)

    def runs(self) -> list:
        """(scheme, leakage method or None) pairs in output order."""
        out = []
        for s in self.schemes:
            if s in ("du", "cu"):
                out += [(s, m) for m in self.leakage]
            else:
                out.append((s, None))
        return out

    def resolved(self) -> dict:
        """Every config key with its effective value."""
        n, r, m = self.network, self.run, self.leakage[0]
        src = {"network": n, "run": r, "leak": m}
        out = {}
        for key, (sec, attr, _) in KEYS.items():
            if sec == "top":
                continue
            out[key] = getattr(src[sec], attr)
        out["schemes"] = list(self.schemes)
        out["leakage"] = [x.kind for x in self.leakage]
        return out


def flatten(table: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in table.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value, kind):
    if kind is list:
        vals = [value] if isinstance(value, str) else value
        if not isinstance(vals, list) or not all(isinstance(x, str) for x in vals):
            raise ValueError(f"{key}: expected a string or a list of strings, got {value!r}")
        return vals
    if kind is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{key}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"{key}: expected a string, got {value!r}")
    return value


def spec_from_dict(values: dict) -> ExperimentSpec:
    """Build and validate an ExperimentSpec from flat dotted keys."""
    parts = {"network": {}, "run": {}, "leak": {}, "top": {}}
    for key, value in values.items():
        if key not in KEYS:
            raise ValueError(f"unknown config key {key!r}")
        sec, attr, kind = KEYS[key]
        parts[sec][attr] = _coerce(key, value, kind)

    def build(cls, kwargs, keys_of):
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ValueError(f"{_name_keys(str(exc), keys_of)}") from None

    network = build(NetworkConfig, parts["network"], "network")
    run = build(RunSettings, parts["run"], "run")
    kinds = parts["top"].get("leakage", ["standard"])
    for k in kinds:
        if k not in METHODS:
            raise ValueError(f"leakage: unknown method {k!r}; choose from {METHODS}")
    leakage = [build(LeakageMethod, {"kind": k, **parts["leak"]}, "leak") for k in kinds]
    top = {"network": network, "run": run, "leakage": leakage}
    if "schemes" in parts["top"]:
        top["schemes"] = parts["top"]["schemes"]
    return ExperimentSpec(**top)


def _name_keys(message: str, section: str) -> str:
    """Rewrite attribute names in a validation message into config keys."""
    for key, (sec, attr, _) in KEYS.items():
        if sec == section and attr != key and message.startswith(attr + " "):
            return key + message[len(attr):]
    return message


def parse_config(path) -> ExperimentSpec:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return spec_from_dict(flatten(data))


def dump_resolved(spec: ExperimentSpec) -> str:
    """TOML text of the resolved ExperimentSpec (flat dotted keys)."""
    lines = []
    for key, value in spec.resolved().items():
        if value is None:
            continue
        lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


def replace_network(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    return dataclasses.replace(spec, network=dataclasses.replace(spec.network, **changes))
