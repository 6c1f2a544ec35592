"""Integration of Hamilton's equations with the variational (monodromy) equations
and the action quadrature.

A single :class:`Propagation` may carry a batch of launches integrated as one
ODE system; :class:`Trajectory` objects are cut from it at any duration, which
lets the shooting code read off many trajectories of different length from one
long integration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import null_space

from .dynamics import (
    ModelSpec,
    PhasePoint,
    Representation,
    energy_batch,
    energy_gradient_batch,
    flow_batch,
)
from .errors import ConfigError, DimensionError, IntegrationBlowup, RangeError

__all__ = [
    "Trajectory",
    "Propagation",
    "propagate",
    "integrate",
    "action_mixed",
    "action_mixed_quadrature",
    "evaluate_at",
    "caustic_determinant",
    "trajectory_to_json",
    "trajectory_from_json",
]

logger = logging.getLogger(__name__)

RTOL = 1e-12
ATOL = 1e-12
DEFAULT_STEP = 0.1
# caustic crossings are localized to this accuracy in t
CROSSING_XTOL = 1e-9
# extra dense-output evaluations per solver step when scanning for sign changes
SCAN_SUBDIVISIONS = 4


def _layout(n: int) -> tuple[slice, slice, int]:
    d = 2 * n
    return slice(0, d), slice(d, d + d * d), d + d * d + 1


def _rhs(model: ModelSpec, batch: int):
    n = model.n
    d = 2 * n
    xs, ms, width = _layout(n)
    inv_m = 1.0 / model.masses

    def fun(t, y):
        Y = y.reshape(batch, width)
        x = Y[:, xs]
        M = Y[:, ms].reshape(batch, d, d)
        q, p = x[:, :n], x[:, n:]
        out = np.empty_like(Y)
        out[:, xs] = flow_batch(model, x)
        dM = np.empty_like(M)
        # A = [[0, diag(1/m)], [-Hess V, 0]]
        dM[:, :n, :] = inv_m[None, :, None] * M[:, n:, :]
        dM[:, n:, :] = -np.einsum("bij,bjk->bik", model.hessian(q), M[:, :n, :])
        out[:, ms] = dM.reshape(batch, d * d)
        out[:, -1] = np.sum(p * p * inv_m, axis=-1)
        return out.ravel()

    return fun


def launch_directions(model: ModelSpec, rep: Representation, x0) -> np.ndarray:
    """Energy-preserving launch directions that keep the initial rep coordinates fixed, shape (2n, n-1)."""
    n = model.n
    C = np.zeros((2 * n, n))
    C[rep.complement_rows, np.arange(n)] = 1.0
    if n == 1:
        return np.zeros((2, 0))
    g = energy_gradient_batch(model, np.asarray(x0, float)) @ C
    kernel = null_space(g[None, :]) if np.any(g) else np.eye(n)[:, : n - 1]
    return C @ kernel


def _family_determinant(model, rep, L, xs, Ms) -> np.ndarray:
    # L broadcasts against the sample axis: (2n, n-1) or (N, 2n, n-1)
    cols = (Ms @ L)[:, rep.rows, :]
    fdot = flow_batch(model, xs)[:, rep.rows]
    return np.linalg.det(np.concatenate([cols, fdot[:, :, None]], axis=2))


def caustic_determinant(model: ModelSpec, rep: Representation, x0, xs, Ms) -> np.ndarray:
    """Determinant whose sign changes mark caustics of the fixed-energy family.

    The family consists of all trajectories leaving the fixed initial
    representation coordinates of ``x0`` at the energy of ``x0``; it is
    parameterized by the n-1 energy-preserving launch directions and the time.
    Returns ``det[ (M L)_rep | xdot_rep ]`` for every sample.
    """
    xs = np.atleast_2d(xs)
    Ms = np.asarray(Ms).reshape(-1, 2 * model.n, 2 * model.n)
    return _family_determinant(model, rep, launch_directions(model, rep, x0), xs, Ms)


@dataclass(frozen=True)
class Trajectory:
    """Classical path at fixed energy with monodromy, action and caustic records."""

    model: ModelSpec
    energy: float
    t_f: float
    times: np.ndarray
    states: np.ndarray
    monodromy: np.ndarray
    action_full: float
    caustic_log: dict[str, tuple[float, ...]]
    sample_monodromies: np.ndarray | None = None
    actions: np.ndarray | None = None
    dense: object = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    @property
    def xf(self) -> np.ndarray:
        return self.states[-1]

    @property
    def initial(self) -> PhasePoint:
        return PhasePoint.from_array(self.x0)

    @property
    def final(self) -> PhasePoint:
        return PhasePoint.from_array(self.xf)

    @property
    def samples(self) -> list[tuple[float, PhasePoint]]:
        return [(float(t), PhasePoint.from_array(x)) for t, x in zip(self.times, self.states)]

    def energies(self) -> np.ndarray:
        return energy_batch(self.model, self.states)

    def flow_at_end(self) -> np.ndarray:
        return flow_batch(self.model, self.xf)


def _vector_roots(f, lo, hi, flo, fhi, xtol=1e-14, maxiter=100):
    """Illinois regula falsi on many brackets at once; ``f`` is vectorized."""
    lo, hi, flo, fhi = (np.array(v, float) for v in (lo, hi, flo, fhi))
    x = lo.copy()
    side = np.zeros(lo.shape, int)
    for _ in range(maxiter):
        x = np.where(fhi != flo, (lo * fhi - hi * flo) / (fhi - flo), 0.5 * (lo + hi))
        x = np.clip(x, np.minimum(lo, hi), np.maximum(lo, hi))
        fx = f(x)
        left = np.sign(fx) == np.sign(flo)
        # replace the endpoint with the same sign; halve the stale one (Illinois)
        lo = np.where(left, x, lo)
        flo = np.where(left, fx, flo)
        hi = np.where(~left, x, hi)
        fhi = np.where(~left, fx, fhi)
        fhi = np.where(left & (side == 1), 0.5 * fhi, fhi)
        flo = np.where(~left & (side == -1), 0.5 * flo, flo)
        side = np.where(left, 1, -1)
        if np.all((np.abs(hi - lo) <= xtol * np.maximum(1.0, np.abs(x))) | (fx == 0)):
            break
    return x



class Propagation:
    """Dense solution of a batch of launches integrated together."""

    def __init__(self, model: ModelSpec, x0s: np.ndarray, t_end: float, step: float):
        self.model = model
        self.x0s = np.atleast_2d(np.asarray(x0s, float))
        self.batch = self.x0s.shape[0]
        self.t_end = float(t_end)
        n = model.n
        xs, ms, width = _layout(n)
        self._width = width
        y0 = np.zeros((self.batch, width))
        y0[:, xs] = self.x0s
        y0[:, ms] = np.eye(2 * n).ravel()
        sol = solve_ivp(
            _rhs(model, self.batch),
            (0.0, self.t_end),
            y0.ravel(),
            method="DOP853",
            rtol=RTOL,
            atol=ATOL,
            max_step=step,
            dense_output=True,
        )
        if sol.status != 0 or not np.all(np.isfinite(sol.y)):
            raise IntegrationBlowup(f"integration failed at t={sol.t[-1]:.6g}: {sol.message}")
        self.ts = sol.t
        self._ys = sol.y.reshape(self.batch, width, -1)
        self._sol = sol.sol
        self._caustics: dict[tuple[int, str], np.ndarray] = {}

    def augmented_all(self, t) -> np.ndarray:
        """Augmented states of every launch at times ``t`` (1-D), shape (batch, len(t), width)."""
        t = np.atleast_1d(np.asarray(t, float))
        y = self._sol(t).reshape(self.batch, self._width, -1)
        return np.moveaxis(y, -1, 1)

    def augmented(self, b: int, t) -> np.ndarray:
        """Augmented state(s) of launch ``b`` at time(s) ``t``, shape t.shape + (width,)."""
        t = np.asarray(t, float)
        y = self.augmented_all(t.ravel())[b]
        return y.reshape(t.shape + (self._width,))

    def state(self, b: int, t) -> np.ndarray:
        return self.augmented(b, t)[..., : 2 * self.model.n]

    @cached_property
    def scan_times(self) -> np.ndarray:
        ts = self.ts
        frac = np.arange(SCAN_SUBDIVISIONS) / SCAN_SUBDIVISIONS
        fine = (ts[:-1, None] + np.diff(ts)[:, None] * frac[None, :]).ravel()
        return np.append(fine, ts[-1])

    @cached_property
    def scan_states(self) -> np.ndarray:
        """Augmented states on :attr:`scan_times`, shape (batch, N, width)."""
        y = self._sol(self.scan_times).reshape(self.batch, self._width, -1)
        # solver nodes are exact, keep them
        y[:, :, ::SCAN_SUBDIVISIONS] = self._ys
        return np.moveaxis(y, -1, 1)

    def crossings(self, b: int, rep: Representation) -> np.ndarray:
        """Times in (0, t_end) where the caustic determinant of ``rep`` changes sign."""
        key = (b, rep.key)
        if key not in self._caustics:
            self._all_crossings(rep)
        return self._caustics[key]

    def _all_crossings(self, rep: Representation) -> None:
        n = self.model.n
        d = 2 * n
        Y = self.scan_states
        ts = self.scan_times[1:]
        # J vanishes identically at t=0 in n>1; the first sign is taken after it
        Ls = np.stack([launch_directions(self.model, rep, x) for x in self.x0s])
        N = ts.size
        vals = _family_determinant(
            self.model,
            rep,
            np.repeat(Ls, N, axis=0),
            Y[:, 1:, :d].reshape(-1, d),
            Y[:, 1:, d : d + d * d].reshape(-1, d, d),
        ).reshape(self.batch, N)
        bs, lo, hi, flo, fhi = [], [], [], [], []
        found = [[] for _ in range(self.batch)]
        for b in range(self.batch):
            sign = np.sign(vals[b])
            nz = np.flatnonzero(sign != 0)
            for i, j in zip(nz[:-1], nz[1:]):
                if sign[i] == sign[j]:
                    continue
                if j == i + 1:
                    bs.append(b)
                    lo.append(ts[i])
                    hi.append(ts[j])
                    flo.append(vals[b, i])
                    fhi.append(vals[b, j])
                else:
                    found[b].append(0.5 * (ts[i] + ts[j]))
        if bs:
            bs = np.asarray(bs)

            def f(t):
                y = self.augmented_all(t)[bs, np.arange(len(t))]
                return _family_determinant(self.model, rep, Ls[bs], y[:, :d], y[:, d : d + d * d].reshape(-1, d, d))

            roots = _vector_roots(f, lo, hi, flo, fhi, xtol=CROSSING_XTOL)
            for b, r in zip(bs, roots):
                found[b].append(float(r))
        for b in range(self.batch):
            self._caustics[(b, rep.key)] = np.sort(np.asarray(found[b], float))

    def trajectory(self, b: int, t_f: float, caustics: bool = True) -> Trajectory:
        """Cut launch ``b`` at duration ``t_f``."""
        if not 0.0 < t_f <= self.t_end * (1 + 1e-12):
            raise RangeError(f"t_f={t_f} outside (0, {self.t_end}]")
        t_f = min(float(t_f), self.t_end)
        n = self.model.n
        d = 2 * n
        keep = self.ts < t_f * (1 - 1e-14)
        times = np.append(self.ts[keep], t_f)
        Y = np.concatenate([self._ys[b][:, keep].T, self.augmented(b, t_f)[None, :]], axis=0)
        if t_f == self.ts[-1]:
            Y[-1] = self._ys[b][:, -1]
        log = {}
        if caustics:
            for rep in Representation.all(n):
                c = self.crossings(b, rep)
                log[rep.key] = tuple(float(t) for t in c[(c > 0) & (c < t_f)])
        Ms = Y[:, d : d + d * d].reshape(-1, d, d)
        x0 = Y[0, :d]
        return Trajectory(
            model=self.model,
            energy=float(energy_batch(self.model, x0)),
            t_f=t_f,
            times=times,
            states=Y[:, :d].copy(),
            monodromy=Ms[-1].copy(),
            action_full=float(Y[-1, -1]),
            caustic_log=log,
            sample_monodromies=Ms.copy(),
            actions=Y[:, -1].copy(),
            dense=_LaunchView(self, b, t_f),
        )


class _LaunchView:
    """Dense-output accessor restricted to one launch."""

    def __init__(self, prop: Propagation, b: int, t_f: float):
        self.prop, self.b, self.t_f = prop, b, t_f

    def __call__(self, t):
        return self.prop.augmented(self.b, t)


def propagate(model: ModelSpec, x0s, t_end: float, step: float = DEFAULT_STEP) -> Propagation:
    if step <= 0:
        raise ConfigError("step must be positive")
    if not t_end > 0:
        raise ConfigError("t_end must be positive")
    x0s = np.atleast_2d(np.asarray(x0s, float))
    if x0s.shape[1] != 2 * model.n:
        raise DimensionError(f"launch states must have length {2 * model.n}")
    if not np.all(np.isfinite(x0s)):
        raise ConfigError("non-finite initial state")
    return Propagation(model, x0s, t_end, step)


def integrate(model: ModelSpec, x0: PhasePoint, t_f: float, step: float = DEFAULT_STEP) -> Trajectory:
    """Integrate one trajectory for duration ``t_f`` with monodromy and action."""
    if not isinstance(x0, PhasePoint):
        x0 = PhasePoint.from_array(x0)
    if x0.n != model.n:
        raise DimensionError(f"x0 has n={x0.n}, model has n={model.n}")
    if step <= 0:
        raise ConfigError("step must be positive")
    if not t_f > 0:
        raise ConfigError("t_f must be positive")
    return propagate(model, x0.as_array()[None, :], t_f, step).trajectory(0, t_f)


def _check_rep(traj: Trajectory, rep: Representation):
    if rep.n != traj.n:
        raise DimensionError(f"representation has n={rep.n}, trajectory has n={traj.n}")


def action_mixed(traj: Trajectory, rep: Representation) -> float:
    """Mixed action ``S + p'_a q'_a - p''_a q''_a`` (Legendre boundary-term form)."""
    _check_rep(traj, rep)
    n = traj.n
    a = np.asarray(rep.alpha, dtype=int)
    x0, xf = traj.x0, traj.xf
    return float(
        traj.action_full + np.dot(x0[n + a], x0[a]) - np.dot(xf[n + a], xf[a])
    )


def action_mixed_quadrature(traj: Trajectory, rep: Representation, nodes: int = 12) -> float:
    """Line-integral form ``int p_b dq_b - int q_a dp_a`` by Gauss-Legendre in time."""
    _check_rep(traj, rep)
    if traj.dense is None:
        raise ConfigError("quadrature needs a trajectory with dense output")
    n = traj.n
    u, w = np.polynomial.legendre.leggauss(nodes)
    t0, t1 = traj.times[:-1], traj.times[1:]
    half = 0.5 * (t1 - t0)
    tq = (0.5 * (t0 + t1))[:, None] + half[:, None] * u[None, :]
    X = traj.dense(tq.ravel())[:, : 2 * n]
    F = flow_batch(traj.model, X)
    beta = list(rep.beta)
    alpha = list(rep.alpha)
    integrand = np.sum(X[:, [n + b for b in beta]] * F[:, beta], axis=-1) - np.sum(
        X[:, alpha] * F[:, [n + a for a in alpha]], axis=-1
    )
    return float(np.sum(integrand.reshape(tq.shape) * w[None, :] * half[:, None]))


def evaluate_at(traj: Trajectory, t: float) -> PhasePoint:
    if t < 0 or t > traj.t_f:
        raise RangeError(f"t={t} outside [0, {traj.t_f}]")
    if t == 0:
        return traj.initial
    if t == traj.t_f:
        return traj.final
    if traj.dense is None:
        raise ConfigError("trajectory has no dense output")
    return PhasePoint.from_array(traj.dense(t)[: 2 * traj.n])


def trajectory_to_json(traj: Trajectory) -> dict:
    n = traj.n
    return {
        "energy": traj.energy,
        "t_f": traj.t_f,
        "samples": [[float(t), list(map(float, x[:n])), list(map(float, x[n:]))] for t, x in zip(traj.times, traj.states)],
        "monodromy": traj.monodromy.tolist(),
        "action_full": traj.action_full,
        "caustic_log": {k: list(v) for k, v in traj.caustic_log.items()},
    }


def trajectory_from_json(model: ModelSpec, data: dict) -> Trajectory:
    times = np.array([s[0] for s in data["samples"]], float)
    states = np.array([list(s[1]) + list(s[2]) for s in data["samples"]], float)
    return Trajectory(
        model=model,
        energy=float(data["energy"]),
        t_f=float(data["t_f"]),
        times=times,
        states=states,
        monodromy=np.asarray(data["monodromy"], float),
        action_full=float(data["action_full"]),
        caustic_log={k: tuple(v) for k, v in data["caustic_log"].items()},
    )
