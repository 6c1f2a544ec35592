"""Second-derivative (stability) matrices of the representation action and
Maslov indices.

For a representation with momenta ``alpha`` and positions ``beta`` the action
``S~ = S + p'_a q'_a - p''_a q''_a`` has exact first derivatives

    dS~/dp'_a = q'_a      dS~/dq'_b = -p'_b
    dS~/dp''_a = -q''_a   dS~/dq''_b = p''_b      dS~/dE = t_f

The (n+1)x(n+1) matrix has rows indexed by the initial representation
coordinates and E, columns by the final representation coordinates and E:
``matrix[i, j] = d(dS~/d final_j) / d initial_i``. Its determinant is D_s for
k = 0, D_T for k = n and the mixed determinant otherwise.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .dynamics import ModelSpec, Representation, energy_gradient_batch, flow_batch
from .errors import (
    CausticProximity,
    DegenerateBVP,
    DomainError,
    FDStencilError,
    MixedGreensError,
    NoConvergence,
)
from .pathfinder import (
    BoundaryCondition,
    SearchParams,
    _newton_on_dense,
    _theta_from_complement,
    launch,
    refine,
)
from .trajectory import Trajectory, action_mixed, propagate

__all__ = [
    "ActionDerivatives",
    "MaslovCount",
    "action_derivatives",
    "action_derivatives_many",
    "linearized_action_derivatives",
    "final_first_derivatives",
    "initial_first_derivatives",
    "first_derivative_check",
    "maslov_index",
    "DEFAULT_FD_STEP",
]

DEFAULT_FD_STEP = 1e-4
# det of the boundary-value Jacobian below this means the trajectory sits on a caustic
CAUSTIC_DET = 1e-12


@dataclass(frozen=True)
class ActionDerivatives:
    rep: Representation
    matrix: np.ndarray
    det: float


@dataclass(frozen=True)
class MaslovCount:
    rep: Representation
    index: int
    crossing_times: tuple[float, ...]


def _signs(rep: Representation) -> np.ndarray:
    return np.where(rep.is_momentum, -1.0, 1.0)


def final_first_derivatives(x_final, t_f: float, rep: Representation) -> np.ndarray:
    """``(dS~/d final_i ..., dS~/dE)``: ``-q''_a``, ``p''_b`` and ``t_f``."""
    x_final = np.asarray(x_final)
    return np.append(_signs(rep) * x_final[..., rep.complement_rows], t_f)


def initial_first_derivatives(x_initial, t_f: float, rep: Representation) -> np.ndarray:
    """``(dS~/d initial_i ..., dS~/dE)``: ``q'_a``, ``-p'_b`` and ``t_f``."""
    x_initial = np.asarray(x_initial)
    return np.append(-_signs(rep) * x_initial[..., rep.complement_rows], t_f)


def _perturbations(bc: BoundaryCondition, fd_step: float, richardson: bool):
    """(row, h) pairs; each row gets a central stencil at h (and h/2)."""
    vals = np.append(bc.initial_values, bc.energy)
    steps = fd_step * np.maximum(1.0, np.abs(vals))
    hs = (1.0, 0.5) if richardson else (1.0,)
    return [(row, steps[row] * f) for f in hs for row in range(bc.n + 1)]


def _perturbed_bc(bc: BoundaryCondition, row: int, delta: float) -> BoundaryCondition:
    if row == bc.n:
        return bc.with_energy(bc.energy + delta)
    iv = list(bc.initial_values)
    iv[row] += delta
    return BoundaryCondition(bc.rep, tuple(iv), bc.final_values, bc.energy)


def _bvp_jacobian_det(model: ModelSpec, bc: BoundaryCondition, traj: Trajectory) -> float:
    """Determinant of the boundary-value Jacobian with respect to (complement coords, t)."""
    n = model.n
    rep = bc.rep
    C = np.zeros((2 * n, n))
    C[rep.complement_rows, np.arange(n)] = 1.0
    Fu = np.zeros((n + 1, n + 1))
    Fu[:n, :n] = (traj.monodromy @ C)[rep.rows]
    Fu[:n, n] = flow_batch(model, traj.xf)[rep.rows]
    Fu[n, :n] = energy_gradient_batch(model, traj.x0) @ C
    scale = max(1.0, np.max(np.abs(Fu))) ** (n + 1)
    return float(np.linalg.det(Fu) / scale)


def _assemble_matrix(bc: BoundaryCondition, values: dict, perts, richardson: bool) -> np.ndarray:
    n = bc.n
    rows = []
    for row in range(n + 1):
        ests = []
        for (r, h) in perts:
            if r != row:
                continue
            ests.append((values[(r, h, 1)] - values[(r, h, -1)]) / (2 * h))
        d = (4 * ests[1] - ests[0]) / 3 if richardson else ests[0]
        rows.append(d)
    return np.array(rows)


def action_derivatives(
    model: ModelSpec,
    bc: BoundaryCondition,
    traj: Trajectory,
    params: SearchParams,
    fd_step: float = DEFAULT_FD_STEP,
    richardson: bool = True,
) -> ActionDerivatives:
    """Stability matrix by central differences of exact first derivatives.

    Each stencil point re-solves the boundary-value problem with perturbed
    initial data or energy, warm-started from ``traj``. Richardson
    extrapolation over steps h and h/2 removes the leading O(h^2) error.
    """
    return action_derivatives_many(model, [(bc, [traj])], params, fd_step, richardson)[0][0]


def action_derivatives_many(
    model: ModelSpec,
    items: list[tuple[BoundaryCondition, list[Trajectory]]],
    params: SearchParams,
    fd_step: float = DEFAULT_FD_STEP,
    richardson: bool = True,
) -> list[list[ActionDerivatives]]:
    """Batched :func:`action_derivatives` over many boundary problems and trajectories."""
    for bc, trajs in items:
        for tr in trajs:
            if abs(_bvp_jacobian_det(model, bc, tr)) < CAUSTIC_DET:
                raise CausticProximity(f"trajectory with t_f={tr.t_f:.6g} sits on a caustic")
    if model.n == 1:
        values = _stencil_values_1d(model, items, params, fd_step, richardson)
    else:
        values = _stencil_values_refine(model, items, params, fd_step, richardson)
    out = []
    for (bc, trajs), vals in zip(items, values):
        perts = _perturbations(bc, fd_step, richardson)
        row = []
        for v in vals:
            m = _assemble_matrix(bc, v, perts, richardson)
            row.append(ActionDerivatives(bc.rep, m, float(np.linalg.det(m))))
        out.append(row)
    return out


def _stencil_values_refine(model, items, params, fd_step, richardson):
    out = []
    for bc, trajs in items:
        perts = _perturbations(bc, fd_step, richardson)
        per_traj = []
        for tr in trajs:
            vals = {}
            guess = (tr.x0[bc.rep.complement_rows], tr.t_f)
            for row, h in perts:
                for sign in (1, -1):
                    try:
                        sol = refine(model, _perturbed_bc(bc, row, sign * h), guess, params)
                    except (NoConvergence, DegenerateBVP, DomainError) as exc:
                        raise FDStencilError(f"stencil re-solve failed (row {row}, h={sign * h:.3g}): {exc}") from exc
                    if abs(sol.t_f - tr.t_f) > 0.5 * max(1.0, tr.t_f) or np.linalg.norm(sol.x0 - tr.x0) > 0.5:
                        raise FDStencilError("stencil re-solve jumped to a different trajectory")
                    vals[(row, h, sign)] = final_first_derivatives(sol.xf, sol.t_f, bc.rep)
            per_traj.append(vals)
        out.append(per_traj)
    return out


def _stencil_values_1d(model, items, params, fd_step, richardson):
    """All stencil re-solves of 1-D problems from shared batched integrations.

    Perturbing initial data or energy moves the launch; every trajectory on the
    same launch is re-solved from one dense solution by Newton in t started at
    its unperturbed duration.
    """
    # launch key -> (x0, horizon); requests reference launch keys
    launches: dict[tuple, list] = {}
    requests = []
    for i, (bc, trajs) in enumerate(items):
        perts = _perturbations(bc, fd_step, richardson)
        for j, tr in enumerate(trajs):
            theta = _theta_from_complement(model, bc.rep, tr.x0[bc.rep.complement_rows])
            for row, h in perts:
                for sign in (1, -1):
                    pbc = _perturbed_bc(bc, row, sign * h)
                    key = (pbc.rep.key, pbc.initial_values, pbc.energy, theta)
                    if key not in launches:
                        try:
                            ln = launch(model, pbc.rep, pbc.initial_values, pbc.energy, theta)
                        except MixedGreensError as exc:
                            raise FDStencilError(f"stencil launch failed: {exc}") from exc
                        if ln is None:
                            raise FDStencilError("perturbed launch misses the energy shell")
                        launches[key] = [ln.x0, 0.0]
                    launches[key][1] = max(launches[key][1], tr.t_f)
                    requests.append((i, j, (row, h, sign), key, pbc, tr))
    keys = list(launches)
    index = {k: b for b, k in enumerate(keys)}
    values = [[{} for _ in trajs] for _, trajs in items]
    chunk_of = {}
    for start in range(0, len(keys), params.max_batch):
        ck = keys[start : start + params.max_batch]
        horizon = max(launches[k][1] for k in ck) * 1.05 + 1.0
        prop = propagate(model, np.array([launches[k][0] for k in ck]), horizon, params.step)
        for k in ck:
            chunk_of[k] = (prop, index[k] - start)
    by_prop = defaultdict(list)
    for req in requests:
        prop, b = chunk_of[req[3]]
        by_prop[id(prop)].append((prop, b, req))
    for group in by_prop.values():
        prop = group[0][0]
        bs = np.array([b for _, b, _ in group])
        rows = np.array([int(req[4].rep.rows[0]) for _, _, req in group])
        targets = np.array([req[4].final_values[0] for _, _, req in group])
        t0 = np.array([req[5].t_f for _, _, req in group])
        t, r, dr = _newton_on_dense(prop, bs, rows, targets, t0, params.newton_tol, iters=30)
        scale = np.maximum(1.0, np.abs(targets))
        bad = (np.abs(r) > params.newton_tol * scale) | (np.abs(t - t0) > 0.5 * np.maximum(1.0, t0))
        if np.any(bad):
            raise FDStencilError(f"{int(bad.sum())} stencil re-solves failed to converge")
        d = 2 * model.n
        Y = prop.augmented_all(t)[bs, np.arange(len(t)), :d]
        for (_, _, (i, j, tag, _, pbc, _)), y, tt in zip(group, Y, t):
            values[i][j][tag] = final_first_derivatives(y, tt, pbc.rep)
    return values


def linearized_action_derivatives(model: ModelSpec, bc: BoundaryCondition, traj: Trajectory) -> ActionDerivatives:
    """Same matrix by implicit differentiation of the boundary-value equations
    through the monodromy matrix (no re-solves)."""
    n = model.n
    rep = bc.rep
    A = np.zeros((2 * n, n))
    A[rep.rows, np.arange(n)] = 1.0
    C = np.zeros((2 * n, n))
    C[rep.complement_rows, np.arange(n)] = 1.0
    M = traj.monodromy
    xdot = flow_batch(model, traj.xf)
    grad0 = energy_gradient_batch(model, traj.x0)
    Fu = np.zeros((n + 1, n + 1))
    Fu[:n, :n] = (M @ C)[rep.rows]
    Fu[:n, n] = xdot[rep.rows]
    Fu[n, :n] = grad0 @ C
    Fr = np.zeros((n + 1, n + 1))
    Fr[:n, :n] = (M @ A)[rep.rows]
    Fr[n, :n] = grad0 @ A
    Fr[n, n] = -1.0
    if abs(np.linalg.det(Fu)) < CAUSTIC_DET * max(1.0, np.max(np.abs(Fu))) ** (n + 1):
        raise CausticProximity("boundary-value Jacobian is singular")
    du = -np.linalg.solve(Fu, Fr)
    dc, dt = du[:n], du[n]
    dx0 = np.column_stack([A, np.zeros(2 * n)]) + C @ dc
    dxf = M @ dx0 + np.outer(xdot, dt)
    df = np.vstack([_signs(rep)[:, None] * dxf[rep.complement_rows], dt])
    matrix = df.T
    return ActionDerivatives(rep, matrix, float(np.linalg.det(matrix)))


def first_derivative_check(
    model: ModelSpec,
    bc: BoundaryCondition,
    traj: Trajectory,
    params: SearchParams,
    h: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of the mixed action over re-solved problems versus the
    exact first derivatives.

    Returns ``(fd, exact)`` ordered as (initial values..., final values..., E).
    """
    n = bc.n
    exact = np.concatenate(
        [
            initial_first_derivatives(traj.x0, traj.t_f, bc.rep)[:n],
            final_first_derivatives(traj.xf, traj.t_f, bc.rep),
        ]
    )
    guess = (traj.x0[bc.rep.complement_rows], traj.t_f)
    fd = np.empty(2 * n + 1)
    for slot in range(2 * n + 1):
        s = []
        for sign in (1, -1):
            iv, fv, E = list(bc.initial_values), list(bc.final_values), bc.energy
            if slot < n:
                iv[slot] += sign * h
            elif slot < 2 * n:
                fv[slot - n] += sign * h
            else:
                E += sign * h
            pbc = BoundaryCondition(bc.rep, tuple(iv), tuple(fv), E)
            s.append(action_mixed(refine(model, pbc, guess, params), bc.rep))
        fd[slot] = (s[0] - s[1]) / (2 * h)
    return fd, exact


def maslov_index(traj: Trajectory, rep: Representation) -> MaslovCount:
    """Number of sign changes of the representation's caustic determinant in (0, t_f)."""
    times = tuple(t for t in traj.caustic_log[rep.key] if 0 < t < traj.t_f)
    return MaslovCount(rep, len(times), times)
