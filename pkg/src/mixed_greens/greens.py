"""Stationary-phase Green functions at fixed energy in position, momentum and
mixed representations.

Every representation uses the same assembly rule,

    G = 2 pi / (2 pi i hbar)^((n+1)/2) * sum_traj |D|^(1/2) exp(i (S~/hbar - nu pi/2)),

with |D|^(1/2) the positive root and all phase content in the integer ``nu``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .amplitude import (
    DEFAULT_FD_STEP,
    action_derivatives_many,
    linearized_action_derivatives,
    maslov_index,
)
from .dynamics import ModelSpec, Representation
from .errors import ConfigError, MixedGreensError
from .pathfinder import BoundaryCondition, SearchParams, find_trajectories_many
from .trajectory import Trajectory, action_mixed

__all__ = [
    "Contribution",
    "GreensValue",
    "prefactor",
    "contribution_term",
    "assemble",
    "assemble_many",
    "energy_scan",
    "position_greens",
    "momentum_greens",
    "greens_to_json",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Contribution:
    trajectory_id: int
    t_f: float
    action: float
    det: float
    maslov: int
    term: complex
    initial: tuple[float, ...]
    final: tuple[float, ...]


@dataclass(frozen=True)
class GreensValue:
    rep: Representation
    boundary: BoundaryCondition
    hbar: float
    value: complex
    contributions: tuple[Contribution, ...]
    t_max: float
    eta: float = 0.0
    diagnostics: tuple[str, ...] = field(default=())

    @property
    def n_traj(self) -> int:
        return len(self.contributions)


def prefactor(n: int, hbar: float, exponent: float | None = None) -> complex:
    """``2 pi / (2 pi i hbar)^exponent`` on the principal branch; exponent defaults to (n+1)/2."""
    if exponent is None:
        exponent = 0.5 * (n + 1)
    return 2 * np.pi / (2j * np.pi * hbar) ** exponent


def contribution_term(n, hbar, action, det, maslov, t_f=0.0, eta=0.0, exponent=None) -> complex:
    """One trajectory's term. ``eta`` shifts the energy to E + i eta to first order,
    which damps each term by ``exp(-eta t_f / hbar)``."""
    amp = prefactor(n, hbar, exponent) * np.sqrt(abs(det))
    return complex(amp * np.exp(1j * (action / hbar - maslov * np.pi / 2) - eta * t_f / hbar))


def _check_hbar(hbar):
    if not hbar > 0:
        raise ConfigError(f"hbar must be positive, got {hbar}")


def _build(model, bc, hbar, trajs, dets, params, eta, exponent) -> GreensValue:
    contribs = []
    for i, (tr, det) in enumerate(zip(trajs, dets)):
        S = action_mixed(tr, bc.rep)
        mu = maslov_index(tr, bc.rep).index
        contribs.append(
            Contribution(
                trajectory_id=i,
                t_f=tr.t_f,
                action=S,
                det=det,
                maslov=mu,
                term=contribution_term(model.n, hbar, S, det, mu, tr.t_f, eta, exponent),
                initial=tuple(map(float, tr.x0)),
                final=tuple(map(float, tr.xf)),
            )
        )
    value = complex(sum(c.term for c in contribs)) if contribs else 0j
    diags = () if contribs else ("NoTrajectories",)
    return GreensValue(bc.rep, bc, hbar, value, tuple(contribs), params.t_max, eta, diags)


def assemble_many(
    model: ModelSpec,
    bcs: list[BoundaryCondition],
    hbar: float,
    params: SearchParams,
    *,
    derivatives: str = "fd",
    fd_step: float = DEFAULT_FD_STEP,
    eta: float = 0.0,
    exponent: float | None = None,
) -> list[GreensValue]:
    _check_hbar(hbar)
    if derivatives not in ("fd", "linearized"):
        raise ConfigError(f"unknown derivative route {derivatives!r}")
    all_trajs = find_trajectories_many(model, bcs, params)
    if derivatives == "fd":
        ads = action_derivatives_many(model, list(zip(bcs, all_trajs)), params, fd_step)
        dets = [[a.det for a in row] for row in ads]
    else:
        dets = [[linearized_action_derivatives(model, bc, tr).det for tr in trajs] for bc, trajs in zip(bcs, all_trajs)]
    return [
        _build(model, bc, hbar, trajs, d, params, eta, exponent)
        for bc, trajs, d in zip(bcs, all_trajs, dets)
    ]


def assemble(
    model: ModelSpec,
    bc: BoundaryCondition,
    hbar: float,
    params: SearchParams,
    **kwargs,
) -> GreensValue:
    """Semiclassical Green function for one boundary problem.

    Keyword arguments: ``derivatives`` ("fd" or "linearized"), ``fd_step``,
    ``eta`` (imaginary energy shift) and ``exponent`` (prefactor power,
    default (n+1)/2).
    """
    return assemble_many(model, [bc], hbar, params, **kwargs)[0]


def position_greens(model, q_final, q_initial, energy, hbar, params, **kwargs) -> GreensValue:
    bc = BoundaryCondition(Representation(model.n), q_initial, q_final, energy)
    return assemble(model, bc, hbar, params, **kwargs)


def momentum_greens(model, p_final, p_initial, energy, hbar, params, **kwargs) -> GreensValue:
    bc = BoundaryCondition(Representation(model.n, tuple(range(model.n))), p_initial, p_final, energy)
    return assemble(model, bc, hbar, params, **kwargs)


def energy_scan(
    model: ModelSpec,
    bc_template: BoundaryCondition,
    energies,
    hbar: float,
    params: SearchParams,
    *,
    chunk: int = 16,
    **kwargs,
) -> list[tuple[float, GreensValue]]:
    """Assemble on an increasing energy grid. Failures are recorded in the
    returned value's diagnostics and the scan continues."""
    energies = np.asarray(energies, float).ravel()
    if energies.size == 0:
        raise ConfigError("energy grid is empty")
    if np.any(np.diff(energies) <= 0):
        raise ConfigError("energy grid must be strictly increasing")
    out = []
    for start in range(0, energies.size, chunk):
        Es = energies[start : start + chunk]
        bcs = [bc_template.with_energy(E) for E in Es]
        try:
            vals = assemble_many(model, bcs, hbar, params, **kwargs)
        except MixedGreensError:
            vals = []
            for bc in bcs:
                try:
                    vals.append(assemble(model, bc, hbar, params, **kwargs))
                except MixedGreensError as exc:
                    logger.warning("E=%.6g failed: %s", bc.energy, exc)
                    vals.append(
                        GreensValue(bc.rep, bc, hbar, complex(np.nan, np.nan), (), params.t_max,
                                    kwargs.get("eta", 0.0), (f"{type(exc).__name__}: {exc}",))
                    )
        out.extend(zip(map(float, Es), vals))
    return out


def greens_to_json(g: GreensValue) -> dict:
    return {
        "rep": list(g.rep.alpha),
        "boundary": {
            "initial": list(g.boundary.initial_values),
            "final": list(g.boundary.final_values),
            "energy": g.boundary.energy,
        },
        "hbar": g.hbar,
        "eta": g.eta,
        "t_max": g.t_max,
        "value": [g.value.real, g.value.imag],
        "contributions": [
            {
                "trajectory_id": c.trajectory_id,
                "t_f": c.t_f,
                "action": c.action,
                "det": c.det,
                "maslov": c.maslov,
                "term": [c.term.real, c.term.imag],
                "initial": list(c.initial),
                "final": list(c.final),
            }
            for c in g.contributions
        ],
        "diagnostics": list(g.diagnostics),
    }
