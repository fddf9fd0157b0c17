"""Pipeline stages and their on-disk artifacts.

Stages communicate only through files in the output directory, so each can be
re-run on its own: ``equilibrium.json`` -> ``certificates/`` + ``policies/`` +
``verification.json`` -> bounds, simulations and sweeps.  Every artifact
carries a header with the config hash and seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .barrier import (BarrierCertificate, Box, Policy, UnsafeSet, check_unsafe,
                      neighbor_model, synth_isolated, synth_policy, verify_distributed)
from .config import ProjectConfig
from .grid import Decomposition, PowerFlowResult, assemble_dynamics, kron_reduce, power_flow
from .safety_filter import SafetyFilter, compute_beta_max

log = logging.getLogger(__name__)


class ArtifactError(RuntimeError):
    """A stage needs an artifact that is missing or was produced by another config."""


def header(cfg: ProjectConfig) -> dict:
    return {"tool": f"droopsafe {__version__}", "config_hash": cfg.digest,
            "base_config_hash": cfg.base_digest, "seed": cfg.seed}


def csv_header(cfg: ProjectConfig) -> str:
    return f"# droopsafe {__version__} config_hash={cfg.digest} seed={cfg.seed}\n"


def write_json(path: Path, cfg: ProjectConfig, body: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"header": header(cfg), **body}, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: Path, cfg: ProjectConfig | None = None) -> dict:
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path}")
    data = json.loads(path.read_text())
    # overrides (seed, beta, gamma) do not invalidate artifacts of the same config file
    if cfg is not None and data.get("header", {}).get("base_config_hash") != cfg.base_digest:
        raise ArtifactError(f"{path} was produced by a different config; re-run the stage")
    return data


def outdir(cfg: ProjectConfig, out: str | Path | None = None) -> Path:
    return Path(out if out is not None else cfg.output)


# --- power flow ----------------------------------------------------------------

def run_powerflow(cfg: ProjectConfig) -> tuple[PowerFlowResult, object]:
    red = kron_reduce(cfg.network_model())
    return power_flow(red), red


def equilibrium_json(eq: PowerFlowResult, red) -> dict:
    return {"bus_ids": [b.id for b in red.buses], "V": eq.V.tolist(), "theta": eq.theta.tolist(),
            "P": eq.P.tolist(), "Q": eq.Q.tolist(), "iterations": eq.iterations,
            "residual": eq.residual}


def decomposition(cfg: ProjectConfig, out: Path) -> Decomposition:
    """Model assembled from the config and the stored equilibrium."""
    data = read_json(out / "equilibrium.json", cfg)
    red = kron_reduce(cfg.network_model())
    eq = PowerFlowResult(np.array(data["V"]), np.array(data["theta"]), np.array(data["P"]),
                         np.array(data["Q"]), int(data["iterations"]), float(data["residual"]))
    return assemble_dynamics(red, cfg.inverter_params(), eq, cfg.synthesis.trig_degree)


# --- synthesis -----------------------------------------------------------------

@dataclass
class SynthesisOutput:
    certs: list[BarrierCertificate]
    policies: list[Policy]
    verification: dict

    @property
    def passed(self) -> bool:
        return bool(self.verification["passed"])


def synth_box(cfg: ProjectConfig, dec: Decomposition, i: int) -> tuple[Box, list, UnsafeSet]:
    s = cfg.synthesis
    if s.substate:
        names, f, _ = dec.substate(i)
        box = Box(names, [-s.omega_box, cfg.unsafe.v_low], [s.omega_box, cfg.unsafe.v_high])
    else:
        names, f = dec.variables[i], dec.f[i]
        lo = [-s.omega_box, cfg.unsafe.v_low]
        hi = [s.omega_box, cfg.unsafe.v_high]
        if i != 0:
            lo, hi = [-s.angle_box] + lo, [s.angle_box] + hi
        box = Box(names, lo, hi)
    return box, f, UnsafeSet.voltage(f"v{i}", cfg.unsafe.v_low, cfg.unsafe.v_high)


def synthesize(cfg: ProjectConfig, dec: Decomposition, check: bool = True) -> SynthesisOutput:
    s = cfg.synthesis
    certs = []
    for i in range(dec.n):
        box, f, unsafe = synth_box(cfg, dec, i)
        cert = synth_isolated(f, box.variables, unsafe, box, degree=s.degree, kappa=s.kappa,
                              c=s.level, inverter=i, eps=s.eps, rounds=s.rounds,
                              margin_cap=s.margin_cap, bisect=s.inner_bisect)
        cert.angle_box = s.angle_box
        certs.append(cert)
        log.info("inverter %d: certificate found", i)
    policies = []
    for i in range(dec.n):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, i]))
        nb = neighbor_model(certs, dec, i, s.angle_box, rng)
        policies.append(synth_policy(certs[i], dec, nb, rng, degree=s.policy_degree))
    report = verify(cfg, dec, certs, policies) if check else {"passed": False, "inverters": []}
    return SynthesisOutput(certs, policies, report)


def verify(cfg: ProjectConfig, dec: Decomposition, certs: Sequence[BarrierCertificate],
           policies: Sequence[Policy], n: int | None = None) -> dict:
    """Sampling checks of the unsafe-set sign and the distributed level-set condition."""
    s = cfg.synthesis
    n = s.verify_samples if n is None else n
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    reports = verify_distributed(certs, dec, policies, s.angle_box, rng, n=n, tol=s.verify_tol)
    rows = []
    for cert, rep in zip(certs, reports):
        ok_unsafe, max_b = check_unsafe(cert, rng, n)
        row = rep.to_json()
        row.update(unsafe_passed=ok_unsafe, unsafe_max_B=max_b)
        rows.append(row)
    return {"passed": all(r["passed"] and r["unsafe_passed"] for r in rows), "samples": n,
            "inverters": rows}


def write_synthesis(cfg: ProjectConfig, out: Path, res: SynthesisOutput) -> list[Path]:
    paths = []
    for cert, pol in zip(res.certs, res.policies):
        paths.append(write_json(out / "certificates" / f"inverter_{cert.inverter}.json", cfg,
                                cert.to_json()))
        paths.append(write_json(out / "policies" / f"inverter_{cert.inverter}.json", cfg,
                                pol.to_json()))
    paths.append(write_json(out / "verification.json", cfg, res.verification))
    return paths


def load_synthesis(cfg: ProjectConfig, out: Path, n: int) -> tuple[list, list]:
    certs, pols = [], []
    for i in range(n):
        certs.append(BarrierCertificate.from_json(
            read_json(out / "certificates" / f"inverter_{i}.json", cfg)))
        pols.append(Policy.from_json(read_json(out / "policies" / f"inverter_{i}.json", cfg)))
    return certs, pols


# --- filters -------------------------------------------------------------------

def build_filters(cfg: ProjectConfig, dec: Decomposition, certs: Sequence[BarrierCertificate],
                  policies: Sequence[Policy]) -> list[SafetyFilter]:
    fc = cfg.filter
    filters = []
    for i, (cert, pol) in enumerate(zip(certs, policies)):
        if len(cert.variables) != 2:
            raise ValueError("the simulated filter needs (w, v) sub-state certificates")
        g = np.diag(dec.params[i].input_matrix)
        beta = fc.beta_max
        if fc.beta_mode == "bisect":
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, i]))
            beta = compute_beta_max(cert, pol, g, fc.actuator_limits, rng, fc.beta_samples)
        filters.append(SafetyFilter(cert, pol, g, beta, fc.gamma, fc.r_max,
                                    np.array(fc.actuator_limits)))
    return filters
