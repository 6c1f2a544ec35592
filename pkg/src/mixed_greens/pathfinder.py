"""Fixed-energy two-point boundary-value problems in mixed representations.

A trajectory solves ``bc`` when it starts with representation coordinates
``bc.initial_values`` at energy ``bc.energy`` and reaches
``bc.final_values`` after some duration ``t_f``. Initial states are generated
by a *launch*: the conjugate (complement) coordinates are placed on the
energy shell along a ray ``c0 + r(theta) S u(theta)`` from a center ``c0``
inside the shell, so the only unknowns are the launch angle ``theta``
(n = 2; a discrete sign for n = 1) and the duration.

In one dimension every solution lies on one of two launches, so all of them
are read off a single long integration per launch (sign changes of the
residual, polished by a vectorized root finder). In two dimensions a grid of
launch angles seeds Newton iterations on ``(theta, t)``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .dynamics import ModelSpec, Representation, energy_batch, energy_gradient_batch, flow_batch
from .errors import ConfigError, DegenerateBVP, DimensionError, DomainError, NoConvergence
from .trajectory import Propagation, Trajectory, _vector_roots, propagate

__all__ = [
    "BoundaryCondition",
    "SearchParams",
    "Launch",
    "launch",
    "find_trajectories",
    "find_trajectories_many",
    "refine",
    "residual",
    "solve_on_launches",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundaryCondition:
    """Mixed boundary data; values are in coordinate-index order of ``rep``."""

    rep: Representation
    initial_values: tuple[float, ...]
    final_values: tuple[float, ...]
    energy: float

    def __post_init__(self):
        iv = tuple(float(v) for v in np.atleast_1d(self.initial_values))
        fv = tuple(float(v) for v in np.atleast_1d(self.final_values))
        if len(iv) != self.rep.n or len(fv) != self.rep.n:
            raise DimensionError(f"boundary values must have length {self.rep.n}")
        if not np.all(np.isfinite(iv + fv)) or not np.isfinite(self.energy):
            raise ConfigError("boundary data must be finite")
        object.__setattr__(self, "initial_values", iv)
        object.__setattr__(self, "final_values", fv)
        object.__setattr__(self, "energy", float(self.energy))

    @property
    def n(self) -> int:
        return self.rep.n

    def with_energy(self, energy: float) -> "BoundaryCondition":
        return replace(self, energy=float(energy))


@dataclass(frozen=True)
class SearchParams:
    multistart_grid: int = 16
    newton_tol: float = 1e-10
    max_newton_iters: int = 40
    t_max: float = 10.0
    dedup_tol: float = 1e-6
    # max integrator step; also the sample spacing used to scan for roots
    step: float = 0.25
    # roots with t below this are the trivial zero-length path
    t_min: float = 1e-6
    # launches integrated together in one ODE system
    max_batch: int = 256

    def __post_init__(self):
        if self.multistart_grid < 4:
            raise ConfigError("multistart_grid must be >= 4")
        for name in ("newton_tol", "max_newton_iters", "t_max", "dedup_tol", "step", "t_min", "max_batch"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


# ---------------------------------------------------------------- launches


@dataclass(frozen=True)
class Launch:
    x0: np.ndarray
    dx0_dtheta: np.ndarray
    theta: float


def _center_and_scale(model: ModelSpec, rep: Representation) -> tuple[np.ndarray, np.ndarray]:
    # complement coordinates: q_i for i in alpha (scale 1), p_i for i in beta (scale sqrt(m))
    scale = np.where(rep.is_momentum, 1.0, np.sqrt(model.masses))
    return np.zeros(model.n), scale


def _assemble(rep: Representation, a_values, c) -> np.ndarray:
    x0 = np.empty(2 * rep.n)
    x0[rep.rows] = a_values
    x0[rep.complement_rows] = c
    return x0


def _direction(n: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    if n == 1:
        return np.array([np.cos(theta)]), np.array([0.0])
    return np.array([np.cos(theta), np.sin(theta)]), np.array([-np.sin(theta), np.cos(theta)])


def launch(model: ModelSpec, rep: Representation, a_values, energy: float, theta: float) -> Launch | None:
    """On-shell initial state with representation coordinates ``a_values``.

    Returns None when the ray never reaches the energy shell. Raises
    DegenerateBVP when the whole ray lies on the shell (the energy does not
    depend on the complement coordinates).
    """
    a_values = np.asarray(a_values, float)
    c0, scale = _center_and_scale(model, rep)
    u, u_perp = _direction(model.n, theta)

    def g(r):
        return float(energy_batch(model, _assemble(rep, a_values, c0 + r * scale * u))) - energy

    g0 = g(0.0)
    if g0 > 0:
        raise DomainError(
            f"energy {energy} is below the launch center energy {energy + g0} for values {a_values}"
        )
    hi = 1.0
    for _ in range(64):
        if g(hi) > 0:
            break
        hi *= 2.0
    else:
        if abs(g0) <= 1e-14 * max(1.0, abs(energy)) and abs(g(1.0)) <= 1e-14 * max(1.0, abs(energy)):
            raise DegenerateBVP("energy is independent of the conjugate initial coordinates")
        return None
    r = 0.0 if g0 == 0 else brentq(g, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=200)
    c = c0 + r * scale * u
    x0 = _assemble(rep, a_values, c)
    dx = np.zeros(2 * model.n)
    if model.n > 1:
        grad_c = energy_gradient_batch(model, x0)[rep.complement_rows]
        along = grad_c @ (scale * u)
        if along == 0:
            return None
        dr = -r * (grad_c @ (scale * u_perp)) / along
        dx[rep.complement_rows] = scale * (dr * u + r * u_perp)
    return Launch(x0, dx, float(theta))


def _theta_from_complement(model: ModelSpec, rep: Representation, c) -> float:
    c0, scale = _center_and_scale(model, rep)
    z = (np.asarray(c, float) - c0) / scale
    if model.n == 1:
        return 0.0 if z[0] >= 0 else np.pi
    return float(np.arctan2(z[1], z[0]))


def residual(traj: Trajectory, bc: BoundaryCondition) -> np.ndarray:
    return traj.xf[bc.rep.rows] - np.asarray(bc.final_values)


# ---------------------------------------------------------------- root polishing


def _newton_on_dense(prop: Propagation, launches, rows, targets, t, tol, iters=30):
    """Newton in t for residual ``y_rows(t) - target`` on several launches of one propagation.

    Returns (t, residual, derivative) arrays.
    """
    d = 2 * prop.model.n
    t = np.array(t, float)
    launches = np.asarray(launches)
    idx = np.arange(len(t))
    for _ in range(iters):
        Y = prop.augmented_all(t)[launches, idx, :d]
        r = Y[np.arange(len(t)), rows] - targets
        dr = flow_batch(prop.model, Y)[np.arange(len(t)), rows]
        if np.all(np.abs(r) <= tol):
            break
        step = np.where(dr != 0, r / np.where(dr != 0, dr, 1.0), 0.0)
        t = np.clip(t - step, 0.0, prop.t_end)
    return t, r, dr


# ---------------------------------------------------------------- one dimension


def _launch_keys(bc: BoundaryCondition):
    return (bc.rep.key, bc.initial_values, bc.energy)


def _find_1d(model: ModelSpec, bcs: list[BoundaryCondition], params: SearchParams) -> list[list[Trajectory]]:
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, bc in enumerate(bcs):
        groups[_launch_keys(bc)].append(i)
    # launches per group: theta in {0, pi}; drop duplicates (r = 0 launches coincide)
    entries = []
    for key, members in groups.items():
        bc = bcs[members[0]]
        seen = []
        for theta in (0.0, np.pi):
            ln = launch(model, bc.rep, bc.initial_values, bc.energy, theta)
            if ln is None or any(np.allclose(ln.x0, s, rtol=0, atol=1e-15) for s in seen):
                continue
            seen.append(ln.x0)
            entries.append((key, ln))
    results: list[list[Trajectory]] = [[] for _ in bcs]
    for start in range(0, len(entries), params.max_batch):
        chunk = entries[start : start + params.max_batch]
        prop = propagate(model, np.array([ln.x0 for _, ln in chunk]), params.t_max, params.step)
        for b, (key, ln) in enumerate(chunk):
            for i in groups[key]:
                results[i].extend(solve_on_launches(prop, [b], bcs[i], params))
    return [_dedup(model, trajs, params) for trajs in results]


def solve_on_launches(prop: Propagation, launches, bc: BoundaryCondition, params: SearchParams) -> list[Trajectory]:
    """All roots in t of the residual of ``bc`` along the given (1-D) launches."""
    model = prop.model
    row = int(bc.rep.rows[0])
    target = bc.final_values[0]
    ts = prop.scan_times
    out = []
    for b in launches:
        Y = prop.scan_states[b]
        r = Y[:, row] - target
        vel = flow_batch(model, Y[:, : 2 * model.n])[:, row]
        scale = max(1.0, np.max(np.abs(Y[:, row])))
        if np.all(np.abs(vel) <= 1e-13 * scale):
            if np.all(np.abs(r) <= params.newton_tol * scale):
                raise DegenerateBVP(
                    "representation coordinate is conserved and matches the target along a continuum"
                )
            continue
        s = np.sign(r)
        brackets = np.flatnonzero((s[:-1] * s[1:] < 0) | ((s[1:] == 0) & (s[:-1] != 0)))
        if brackets.size == 0:
            continue

        def f(t, b=b):
            return prop.augmented(b, t)[..., row] - target

        roots = _vector_roots(f, ts[brackets], ts[brackets + 1], r[brackets], r[brackets + 1])
        roots, res, _ = _newton_on_dense(
            prop, np.full(roots.size, b), np.full(roots.size, row), target, roots, params.newton_tol, iters=3
        )
        for t, rr in zip(roots, res):
            if t < params.t_min:
                continue
            if abs(rr) > params.newton_tol * scale:
                logger.warning("root at t=%.6g left with residual %.3g", t, rr)
                continue
            out.append(prop.trajectory(b, float(t)))
    return out


# ---------------------------------------------------------------- general n


def _launch_jacobian(model, bc, ln: Launch, prop: Propagation, t: float):
    d = 2 * model.n
    y = prop.augmented(0, t)
    x, M = y[:d], y[d : d + d * d].reshape(d, d)
    rows = bc.rep.rows
    r = x[rows] - np.asarray(bc.final_values)
    fdot = flow_batch(model, x)[rows]
    if model.n == 1:
        J = fdot[:, None]
    else:
        J = np.column_stack([(M @ ln.dx0_dtheta)[rows], fdot])
    return r, J


def refine(model: ModelSpec, bc: BoundaryCondition, guess, params: SearchParams) -> Trajectory:
    """Newton polish of one boundary-value solution.

    ``guess`` is ``(complement_coordinates, t_f)``: initial values of the
    coordinates conjugate to the representation (q'_alpha, p'_beta), of which
    only the direction from the launch center is used, and a duration.
    """
    c, t = guess
    t = float(t)
    if not t > 0:
        raise ConfigError(f"guess duration must be positive, got {t}")
    c = np.atleast_1d(np.asarray(c, float))
    if c.size != model.n:
        raise DimensionError(f"guess needs {model.n} complement coordinates")
    theta = _theta_from_complement(model, bc.rep, c)
    scale = max(1.0, float(np.max(np.abs(bc.final_values))))
    for _ in range(params.max_newton_iters):
        ln = launch(model, bc.rep, bc.initial_values, bc.energy, theta)
        if ln is None:
            raise NoConvergence(f"launch angle {theta:.6g} does not reach the energy shell")
        prop = propagate(model, ln.x0[None, :], t, min(params.step, t))
        r, J = _launch_jacobian(model, bc, ln, prop, t)
        detJ = np.linalg.det(J)
        if np.max(np.abs(r)) <= params.newton_tol * scale:
            if abs(detJ) <= 1e-12 * max(1.0, np.max(np.abs(J)) ** J.shape[0]):
                raise DegenerateBVP(f"singular boundary-value Jacobian at the root (det={detJ:.3g})")
            return prop.trajectory(0, t)
        if abs(detJ) <= 1e-14 * max(1.0, np.max(np.abs(J)) ** J.shape[0]):
            raise DegenerateBVP(f"singular boundary-value Jacobian (det={detJ:.3g})")
        du = np.linalg.solve(J, -r)
        # damping keeps t positive and theta steps moderate
        dt = du[-1]
        if t + dt <= 0:
            dt = -0.5 * t
        dt = float(np.clip(dt, -0.5 * t - 1.0, 0.5 * t + 1.0))
        if model.n > 1:
            theta += float(np.clip(du[0], -0.5, 0.5))
        t += dt
    raise NoConvergence(f"no convergence after {params.max_newton_iters} Newton iterations")


def _find_nd(model: ModelSpec, bc: BoundaryCondition, params: SearchParams) -> list[Trajectory]:
    thetas = 2 * np.pi * np.arange(params.multistart_grid) / params.multistart_grid
    launches = [launch(model, bc.rep, bc.initial_values, bc.energy, th) for th in thetas]
    valid = [i for i, ln in enumerate(launches) if ln is not None]
    if not valid:
        return []
    d = 2 * model.n
    seeds = []
    for start in range(0, len(valid), params.max_batch):
        chunk = valid[start : start + params.max_batch]
        prop = propagate(model, np.array([launches[i].x0 for i in chunk]), params.t_max, params.step)
        R = prop.scan_states[:, :, :d][:, :, bc.rep.rows] - np.asarray(bc.final_values)
        ts = prop.scan_times
        pos = {i: j for j, i in enumerate(chunk)}
        for i in chunk:
            nxt = (i + 1) % params.multistart_grid
            if nxt not in pos:
                continue
            a, b = R[pos[i]], R[pos[nxt]]
            # cells (theta_i..theta_i+1) x (t_j..t_j+1) where both components change sign
            cell = np.ones(len(ts) - 1, bool)
            for comp in range(model.n):
                corners = np.stack([a[:-1, comp], a[1:, comp], b[:-1, comp], b[1:, comp]])
                cell &= (corners.min(axis=0) <= 0) & (corners.max(axis=0) >= 0)
            for j in np.flatnonzero(cell):
                theta = thetas[i] + 0.5 * (thetas[1] - thetas[0])
                seeds.append((theta, 0.5 * (ts[j] + ts[j + 1])))
    found = []
    for theta, t in seeds:
        if t < params.t_min:
            continue
        ln = launch(model, bc.rep, bc.initial_values, bc.energy, theta)
        if ln is None:
            continue
        try:
            traj = refine(model, bc, (ln.x0[bc.rep.complement_rows], t), params)
        except (NoConvergence, DegenerateBVP) as exc:
            logger.debug("seed theta=%.4g t=%.4g dropped: %s", theta, t, exc)
            continue
        if params.t_min <= traj.t_f <= params.t_max:
            found.append(traj)
    return _dedup(model, found, params)


def _dedup(model: ModelSpec, trajs: list[Trajectory], params: SearchParams) -> list[Trajectory]:
    trajs = sorted(trajs, key=lambda tr: tr.t_f)
    if not trajs:
        return []
    keys = np.array([np.append(tr.x0, tr.t_f) for tr in trajs])
    kept: list[int] = []
    for i, key in enumerate(keys):
        if kept:
            close = np.abs(keys[kept] - key) <= params.dedup_tol * np.maximum(1.0, np.abs(key))
            if np.any(np.all(close, axis=1)):
                continue
        kept.append(i)
    return [trajs[i] for i in kept]


def _check_energy(model: ModelSpec, bc: BoundaryCondition):
    if bc.energy <= model.potential_minimum():
        raise DomainError(f"energy {bc.energy} does not exceed the potential minimum")


def find_trajectories(model: ModelSpec, bc: BoundaryCondition, params: SearchParams) -> list[Trajectory]:
    """Every distinct trajectory with ``t_min <= t_f <= t_max`` solving ``bc``, sorted by duration."""
    return find_trajectories_many(model, [bc], params)[0]


def find_trajectories_many(
    model: ModelSpec, bcs: list[BoundaryCondition], params: SearchParams
) -> list[list[Trajectory]]:
    for bc in bcs:
        if bc.n != model.n:
            raise DimensionError(f"boundary condition has n={bc.n}, model has n={model.n}")
        _check_energy(model, bc)
    if model.n == 1:
        return _find_1d(model, bcs, params)
    return [_find_nd(model, bc, params) for bc in bcs]
