"""Project configuration: network file, droop parameters, synthesis, filter and scenarios.

Configs are JSON (or TOML on Python >= 3.11).  Every section is validated
before any pipeline stage runs and unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .grid import Bus, InverterParams, Line, NetworkModel
from .sim import Scenario


class ConfigError(ValueError):
    pass


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class InverterConfig:
    lambda_p: float = 2.43
    lambda_q: float = 0.2
    tau: float = 0.5

    def __post_init__(self):
        if min(self.lambda_p, self.lambda_q, self.tau) <= 0:
            raise ValueError("droop gains and time constant must be positive")

    def params(self) -> InverterParams:
        return InverterParams(self.lambda_p, self.lambda_q, self.tau)


@dataclass
class UnsafeConfig:
    v_low: float = -0.4
    v_high: float = 0.2

    def __post_init__(self):
        if not self.v_low < 0 < self.v_high:
            raise ValueError("the origin must lie strictly inside (v_low, v_high)")


@dataclass
class SynthesisConfig:
    degree: int = 4
    kappa: float = 1.0
    level: float = 0.0
    eps: float = 1e-4
    rounds: int = 20
    margin_cap: float = 1e-3
    inner_bisect: int = 6
    trig_degree: int = 3
    substate: bool = True
    omega_box: float = 8.0
    angle_box: float = 0.3
    policy_degree: int = 1
    verify_samples: int = 100000
    verify_tol: float = 1e-6

    def __post_init__(self):
        if self.degree < 0 or self.trig_degree < 1 or self.policy_degree < 0:
            raise ValueError("degrees must be non-negative (trig degree >= 1)")
        if not 0.0 <= self.level < 1.0:
            raise ValueError("level must lie in [0, 1)")
        if self.kappa < 0 or self.omega_box <= 0 or self.angle_box < 0:
            raise ValueError("kappa, omega_box and angle_box must be non-negative")


@dataclass
class FilterConfig:
    beta_max: float = 1.0
    beta_mode: str = "fixed"  # "fixed" or "bisect" (largest beta within actuator limits)
    gamma: float = 100.0
    r_max: float | None = None
    actuator_limits: list = field(default_factory=lambda: [15.0, 15.0])
    beta_samples: int = 10000

    def __post_init__(self):
        if self.beta_mode not in ("fixed", "bisect"):
            raise ValueError(f"unknown beta_mode {self.beta_mode!r}")
        if self.beta_max < 0 or self.gamma < 0:
            raise ValueError("beta_max and gamma must be non-negative")
        if len(self.actuator_limits) != 2 or min(self.actuator_limits) <= 0:
            raise ValueError("actuator_limits needs two positive entries")
        self.actuator_limits = [float(v) for v in self.actuator_limits]


@dataclass
class BoundsConfig:
    w_range: list = field(default_factory=lambda: [-8.0, 8.0])
    v_range: list = field(default_factory=lambda: [-0.4, 0.2])
    points: list = field(default_factory=lambda: [41, 31])
    betas: list = field(default_factory=lambda: [0.25, 0.5, 1.0])
    gammas: list = field(default_factory=lambda: [0.0, 10.0, 100.0])

    def __post_init__(self):
        if len(self.points) != 2 or min(self.points) < 1:
            raise ValueError("points needs two positive counts")
        if len(self.w_range) != 2 or len(self.v_range) != 2:
            raise ValueError("ranges need two entries")


@dataclass
class SweepConfig:
    scenario: str = "disturbed"
    runs: int = 100

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


@dataclass
class ProjectConfig:
    network: dict
    inverters: list[InverterConfig]
    unsafe: UnsafeConfig
    synthesis: SynthesisConfig
    filter: FilterConfig
    bounds: BoundsConfig
    sweep: SweepConfig
    scenarios: dict[str, Scenario]
    output: str = "out"
    seed: int = 0
    source: str = ""
    digest: str = ""
    base_digest: str = ""  # the file content alone, unaffected by command-line overrides

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None, source: str = "") -> "ProjectConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected an object")
        allowed = {"network", "inverters", "unsafe", "synthesis", "filter", "bounds", "sweep",
                   "scenarios", "output", "seed"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        if "network" not in data:
            raise ConfigError("config: missing 'network'")
        net = data["network"]
        if isinstance(net, str):
            path = Path(net)
            if not path.is_absolute() and base is not None:
                path = base / path
            net = read_structured(path)
        network = validate_network(net)
        n_inv = sum(1 for b in network["buses"] if b["kind"] == "inverter")
        inv = data.get("inverters", {})
        if isinstance(inv, list):
            if len(inv) != n_inv:
                raise ConfigError(f"inverters: {len(inv)} entries for {n_inv} inverter buses")
            inverters = [_build(InverterConfig, d, f"inverters[{k}]") for k, d in enumerate(inv)]
        else:
            one = _build(InverterConfig, inv, "inverters")
            inverters = [one] * n_inv
        scen = {}
        for name, d in data.get("scenarios", {}).items():
            d = dict(d)
            if "v_limits" in d:
                raise ConfigError(f"scenarios.{name}: v_limits come from the unsafe section")
            d.setdefault("name", name)
            d["dispatch"] = [(float(t), u) for t, u in d.get("dispatch", [])]
            scen[name] = _build(Scenario, d, f"scenarios.{name}")
        unsafe = _build(UnsafeConfig, data.get("unsafe", {}), "unsafe")
        for s in scen.values():
            s.v_limits = (unsafe.v_low, unsafe.v_high)
        sweep = _build(SweepConfig, data.get("sweep", {}), "sweep")
        if scen and sweep.scenario not in scen:
            raise ConfigError(f"sweep: unknown scenario {sweep.scenario!r}")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed: expected a non-negative integer")
        canon = json.dumps({**data, "network": net}, sort_keys=True, separators=(",", ":"))
        cfg = cls(network, inverters, unsafe,
                  _build(SynthesisConfig, data.get("synthesis", {}), "synthesis"),
                  _build(FilterConfig, data.get("filter", {}), "filter"),
                  _build(BoundsConfig, data.get("bounds", {}), "bounds"),
                  sweep, scen, str(data.get("output", "out")), seed, source,
                  hashlib.sha256(canon.encode()).hexdigest()[:16])
        cfg.base_digest = cfg.digest
        return cfg

    def network_model(self) -> NetworkModel:
        return network_from_dict(self.network)

    def inverter_params(self) -> list[InverterParams]:
        return [c.params() for c in self.inverters]

    def with_overrides(self, seed: int | None = None, beta: float | None = None,
                       gamma: float | None = None) -> "ProjectConfig":
        cfg = dataclasses.replace(self, filter=dataclasses.replace(self.filter))
        if seed is not None:
            cfg.seed = seed
        if beta is not None:
            cfg.filter.beta_max = beta
            cfg.filter.beta_mode = "fixed"
        if gamma is not None:
            cfg.filter.gamma = gamma
        extra = json.dumps([seed, beta, gamma])
        if seed is not None or beta is not None or gamma is not None:
            cfg.digest = hashlib.sha256((self.digest + extra).encode()).hexdigest()[:16]
        return cfg


def read_structured(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError:  # Python < 3.11
            raise ConfigError(f"{path}: TOML needs Python >= 3.11; use JSON") from None
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path) -> ProjectConfig:
    path = Path(path)
    return ProjectConfig.from_dict(read_structured(path), base=path.parent, source=str(path))


_BUS_KEYS = {"id", "kind", "P", "Q"}
_LINE_KEYS = {"from", "to", "r", "x", "b"}
_NET_KEYS = {"name", "description", "base_mva", "base_kv", "buses", "lines"}


def validate_network(net: Any) -> dict:
    if not isinstance(net, dict):
        raise ConfigError("network: expected an object")
    unknown = sorted(set(net) - _NET_KEYS)
    if unknown:
        raise ConfigError(f"network: unknown keys {unknown}")
    for key in ("buses", "lines"):
        if not isinstance(net.get(key), list):
            raise ConfigError(f"network: '{key}' must be a list")
    for k, b in enumerate(net["buses"]):
        if not isinstance(b, dict) or set(b) - _BUS_KEYS or not {"id", "kind"} <= set(b):
            raise ConfigError(f"network.buses[{k}]: expected keys id, kind and optional P, Q")
        if b["kind"] not in ("inverter", "load"):
            raise ConfigError(f"network.buses[{k}]: unknown kind {b['kind']!r}")
    for k, ln in enumerate(net["lines"]):
        if not isinstance(ln, dict) or set(ln) - _LINE_KEYS or not {"from", "to", "r", "x"} <= set(ln):
            raise ConfigError(f"network.lines[{k}]: expected keys from, to, r, x and optional b")
    if not net["buses"] or net["buses"][0]["kind"] != "inverter":
        raise ConfigError("network: the first bus must be the reference inverter")
    try:
        network_from_dict(net)
    except ValueError as exc:
        raise ConfigError(f"network: {exc}") from None
    return net


def network_from_dict(net: dict) -> NetworkModel:
    buses = [Bus(int(b["id"]), b["kind"], float(b.get("P", 0.0)), float(b.get("Q", 0.0)))
             for b in net["buses"]]
    lines = [Line(int(ln["from"]), int(ln["to"]), float(ln["r"]), float(ln["x"]),
                  float(ln.get("b", 0.0))) for ln in net["lines"]]
    return NetworkModel.from_lines(buses, lines)


def example_path() -> Path:
    """The shipped example config."""
    return Path(__file__).parent / "data" / "example.json"
