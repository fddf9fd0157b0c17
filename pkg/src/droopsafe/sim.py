"""Transient simulation with the safety filter in the loop.

In the disturbance modes every inverter integrates its own exact (w, v) dynamics
while its couplings see sampled neighbor states, held for a resample period:
angles uniform in the angle box and (w, v) drawn from ``D_j[c]`` by rejection.
With ``angle_coupling="held"`` the inverter's own angle inside the couplings is
also the held sample, matching certificates that treat every angle as a bounded
disturbance; ``"integrated"`` uses the integrated own angle instead.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .barrier import BarrierCertificate, sample_level_set
from .grid import Decomposition
from .kernels._pykernels import MODE_COUPLED, MODE_HELD, MODE_HELD_ANGLES
from .safety_filter import SafetyFilter, pack_filters

DISTURBANCE_MODES = ("none", "frozen", "resampled")
ANGLE_COUPLINGS = ("held", "integrated")


@dataclass
class Scenario:
    name: str = "scenario"
    horizon: float = 10.0
    step: float = 1e-3
    dispatch: list = field(default_factory=list)  # [(t_start, [[u_p, u_q], ...]), ...]
    disturbance: str = "resampled"
    resample_period: float = 0.5
    angle_box: float = 0.3
    angle_coupling: str = "held"
    level: float | None = None  # neighbor sampling level (default: each certificate's c)
    filter_on: bool = True
    seed: int = 0
    record_stride: int = 1
    blowup: float = 1e3
    v_limits: tuple[float, float] = (-0.4, 0.2)

    def __post_init__(self):
        if self.step <= 0 or self.horizon < self.step:
            raise ValueError("need step > 0 and horizon >= step")
        if self.disturbance not in DISTURBANCE_MODES:
            raise ValueError(f"unknown disturbance mode {self.disturbance!r}")
        if self.angle_coupling not in ANGLE_COUPLINGS:
            raise ValueError(f"unknown angle coupling {self.angle_coupling!r}")
        if self.resample_period <= 0:
            raise ValueError("resample period must be positive")

    @property
    def mode(self) -> int:
        if self.disturbance == "none":
            return MODE_COUPLED
        return MODE_HELD_ANGLES if self.angle_coupling == "held" else MODE_HELD

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.step))

    def schedule(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if not self.dispatch:
            return np.zeros(1, dtype=np.int64), np.zeros((1, n, 2))
        items = sorted(self.dispatch, key=lambda e: e[0])
        steps = np.array([int(round(t / self.step)) for t, _ in items], dtype=np.int64)
        vals = np.array([np.broadcast_to(np.asarray(u, dtype=float), (n, 2)) for _, u in items])
        if steps[0] > 0:
            steps = np.concatenate([[0], steps])
            vals = np.concatenate([np.zeros((1, n, 2)), vals])
        return steps, vals


@dataclass
class SimTrace:
    t: np.ndarray
    states: np.ndarray  # (T, n, 3): th, w, v
    B: np.ndarray  # (T, n)
    u: np.ndarray  # (T, n, 2)
    unsafe: np.ndarray  # (T, n) bool
    min_B: np.ndarray
    violations: np.ndarray
    active_steps: np.ndarray
    no_guarantee_steps: np.ndarray
    blown_step: int
    seed: int

    @property
    def violated(self) -> bool:
        return bool(np.any(self.violations > 0))

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.t, self.states, self.B, self.u):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        if header:
            buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "inverter", "theta", "omega", "v", "B", "u_p", "u_q", "unsafe"])
        n = self.states.shape[1]
        for k, t in enumerate(self.t):
            for i in range(n):
                th, om, v = self.states[k, i]
                w.writerow([f"{t:.6f}", i, repr(float(th)), repr(float(om)), repr(float(v)),
                            repr(float(self.B[k, i])), repr(float(self.u[k, i, 0])),
                            repr(float(self.u[k, i, 1])), int(self.unsafe[k, i])])
        return buf.getvalue()


def model_arrays(dec: Decomposition):
    return (dec.G, dec.B, dec.delta, dec.V0, dec.lambda_p, dec.lambda_q, dec.tau, dec.P0, dec.Q0)


def neighbor_samples(certs: Sequence[BarrierCertificate], scenario: Scenario, periods: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Held neighbor states (periods, n, 3) for one run."""
    n = len(certs)
    out = np.zeros((periods, n, 3))
    for j, cert in enumerate(certs):
        level = cert.c if scenario.level is None else scenario.level
        pts, _ = sample_level_set(cert, level, rng, periods)
        out[:, j, 1:] = pts
        if j != 0:
            out[:, j, 0] = rng.uniform(-scenario.angle_box, scenario.angle_box, periods)
    return out


def run_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _prepare(dec, certs, filters, scenario, n_runs, seed, x0):
    n = dec.n
    steps = scenario.steps
    if scenario.disturbance in ("none", "frozen"):
        periods = 1
        period_steps = steps + 1
    else:
        period_steps = max(1, int(round(scenario.resample_period / scenario.step)))
        periods = steps // period_steps + 1
    samples = np.zeros((n_runs, periods, n, 3))
    if scenario.disturbance != "none":
        for r, rng in enumerate(run_rngs(seed, n_runs)):
            samples[r] = neighbor_samples(certs, scenario, periods, rng)
    x0 = np.zeros((n_runs, n, 3)) if x0 is None else np.broadcast_to(x0, (n_runs, n, 3))
    req_steps, req = scenario.schedule(n)
    fdata = pack_filters(filters)
    return samples, period_steps, x0, req_steps, req, fdata


def _batch(dec, certs, filters, scenario, n_runs, seed, x0=None, stride=None, backend=None):
    samples, period_steps, x0, req_steps, req, fdata = _prepare(
        dec, certs, filters, scenario, n_runs, seed, x0)
    impl = kernels if backend is None else kernels.backends()[backend]
    stride = scenario.record_stride if stride is None else stride
    return impl.simulate(model_arrays(dec), x0, samples, period_steps,
                         scenario.mode, req_steps, req,
                         int(scenario.filter_on), fdata, scenario.v_limits[0],
                         scenario.v_limits[1], scenario.blowup, scenario.steps, scenario.step,
                         stride)


def integrate(dec: Decomposition, certs: Sequence[BarrierCertificate],
              filters: Sequence[SafetyFilter], scenario: Scenario, x0=None,
              backend: str | None = None) -> SimTrace:
    """One run: RK4 at the scenario step, filter evaluated every step (zero-order hold)."""
    out = _batch(dec, certs, filters, scenario, 1, scenario.seed, x0, backend=backend)
    stride = scenario.record_stride
    nrec = out["trace"].shape[1]
    t = np.arange(nrec) * stride * scenario.step
    states = out["trace"][0]
    lo, hi = scenario.v_limits
    unsafe = (states[..., 2] < lo) | (states[..., 2] > hi)
    return SimTrace(t, states, out["B"][0], out["u"][0], unsafe, out["minB"][0],
                    out["violations"][0], out["active"][0], out["no_guarantee"][0],
                    int(out["blown"][0]), scenario.seed)


@dataclass
class MonteCarloResult:
    seed: int
    filter_on: bool
    min_B: np.ndarray  # (runs, n)
    violations: np.ndarray  # (runs, n) unsafe step counts
    duty: np.ndarray  # (runs, n) fraction of steps with the filter active
    blown: np.ndarray

    @property
    def violation_runs(self) -> int:
        return int(np.sum(np.any(self.violations > 0, axis=1)))

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        if header:
            buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "inverter", "filter", "min_B", "unsafe_steps", "duty", "blown_step"])
        for r in range(self.min_B.shape[0]):
            for i in range(self.min_B.shape[1]):
                w.writerow([r, i, int(self.filter_on), repr(float(self.min_B[r, i])),
                            int(self.violations[r, i]), repr(float(self.duty[r, i])),
                            int(self.blown[r])])
        return buf.getvalue()


def monte_carlo(dec: Decomposition, certs: Sequence[BarrierCertificate],
                filters: Sequence[SafetyFilter], scenario: Scenario, n_runs: int,
                seed: int | None = None, backend: str | None = None) -> MonteCarloResult:
    """Independent runs with per-run RNG streams spawned from the master seed."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seed = scenario.seed if seed is None else seed
    out = _batch(dec, certs, filters, scenario, n_runs, seed, stride=scenario.steps,
                 backend=backend)
    duty = out["active"] / (scenario.steps + 1)
    return MonteCarloResult(seed, scenario.filter_on, out["minB"], out["violations"], duty,
                            out["blown"])
