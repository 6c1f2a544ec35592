"""Partial Fourier transforms by direct quadrature, the inverse transform, and
the caustic-window blend of primitive and transformed Green functions.

Grid functions store the transformed coordinates as ``2k`` uniform axes: the
``k`` final-endpoint axes first, then the ``k`` initial-endpoint axes.  The
forward transform uses the kernel

    (2 pi hbar)^(-k) exp[i (p'.q' - p''.q'') / hbar]

and the inverse uses its complex conjugate, so that the pair is unitary.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dynamics import ModelSpec, Representation, flow_batch
from .errors import ConfigError, DimensionError, DomainError, QuadratureNoConvergence
from .greens import assemble_many, prefactor
from .pathfinder import BoundaryCondition, SearchParams, launch
from .trajectory import propagate

__all__ = [
    "GridFunction",
    "raised_cosine_window",
    "partial_ft_direct",
    "inverse_partial_ft",
    "transform_grid",
    "uniformize",
    "sample_greens",
    "sample_greens_1d",
    "grid_to_json",
    "grid_from_json",
    "grid_to_csv",
]

MIN_COUNT = 16
TAPER = 0.25


@dataclass(frozen=True)
class GridFunction:
    """Complex samples on a product of uniform axes.

    Parameters
    ----------
    rep : Representation
        Representation of the argument space.
    axes : tuple of (min, max, count)
        One entry per array dimension.
    values : ndarray
        Complex samples with shape ``tuple(count for each axis)``.
    """

    rep: Representation
    axes: tuple[tuple[float, float, int], ...]
    values: np.ndarray

    def __post_init__(self):
        axes = tuple((float(a), float(b), int(c)) for a, b, c in self.axes)
        object.__setattr__(self, "axes", axes)
        values = np.asarray(self.values, complex)
        object.__setattr__(self, "values", values)
        if values.shape != tuple(c for _, _, c in axes):
            raise DimensionError(f"values shape {values.shape} does not match axes {axes}")
        for lo, hi, c in axes:
            if not hi > lo:
                raise ConfigError(f"axis ({lo}, {hi}) is empty")
            if c < MIN_COUNT:
                raise ConfigError(f"axes need at least {MIN_COUNT} points, got {c}")
        if not np.all(np.isfinite(values)):
            raise DomainError("grid values must be finite")

    @property
    def grids(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, c) for lo, hi, c in self.axes]

    @property
    def k(self) -> int:
        return len(self.axes) // 2


def raised_cosine_window(x: np.ndarray, lo: float, hi: float, taper: float = TAPER) -> np.ndarray:
    """1 on the inner part of [lo, hi], cosine ramps to 0 over the outer ``taper`` of each half-width."""
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    u = np.abs(np.asarray(x, float) - c) / h
    inner = 1.0 - taper
    s = np.clip((u - inner) / taper, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * s))


def _kernel_matrix(grid, lo, hi, targets, sign, hbar, stride=1):
    # rows: targets, cols: grid samples; trapezoid weight is h since the window vanishes at the ends
    g = grid[::stride]
    h = (grid[1] - grid[0]) * stride
    w = raised_cosine_window(g, lo, hi) * h
    return np.exp(sign * 1j * np.outer(targets, g) / hbar) * w[None, :]


def transform_grid(G: GridFunction, hbar: float, final_targets, initial_targets, *, inverse: bool = False,
                   stride: int = 1) -> np.ndarray:
    """Windowed transform of ``G`` at every combination of target points.

    ``final_targets`` and ``initial_targets`` are sequences of k 1-D arrays.
    Returns an array with one axis per target array, in the order final then
    initial. ``stride`` subsamples the grid (used for convergence checks).
    """
    if not hbar > 0:
        raise ConfigError("hbar must be positive")
    k = G.k
    if len(G.axes) != 2 * k or len(final_targets) != k or len(initial_targets) != k:
        raise DimensionError("need k final and k initial target arrays for a grid with 2k axes")
    # forward: exp(-i p'' q''/hbar) on final axes, exp(+i p' q'/hbar) on initial axes
    s = -1.0 if inverse else 1.0
    signs = [-s] * k + [s] * k
    out = G.values[tuple(slice(None, None, stride) for _ in G.axes)]
    targets = list(final_targets) + list(initial_targets)
    for ax, ((lo, hi, c), grid, tg, sg) in enumerate(zip(G.axes, G.grids, targets, signs)):
        K = _kernel_matrix(grid, lo, hi, np.atleast_1d(np.asarray(tg, float)), sg, hbar, stride)
        out = np.moveaxis(np.tensordot(K, out, axes=([1], [ax])), 0, ax)
    return out * (2 * np.pi * hbar) ** (-k)


def _checked(G, hbar, final_point, initial_point, inverse, rtol, refine):
    fin = [np.atleast_1d(v) for v in np.atleast_1d(np.asarray(final_point, float))]
    ini = [np.atleast_1d(v) for v in np.atleast_1d(np.asarray(initial_point, float))]
    if len(fin) != G.k or len(ini) != G.k:
        raise DimensionError(f"evaluation point needs {G.k} final and {G.k} initial values")
    value = complex(transform_grid(G, hbar, fin, ini, inverse=inverse).ravel()[0])
    if rtol is None:
        return value
    coarse = complex(transform_grid(G, hbar, fin, ini, inverse=inverse, stride=2).ravel()[0])
    scale = max(abs(value), abs(coarse))
    if scale > 0 and abs(value - coarse) > rtol * scale:
        raise QuadratureNoConvergence(
            f"halving the grid density changes the transform by {abs(value - coarse) / scale:.3g} (> {rtol:g})"
        )
    if refine is not None:
        wide = refine(G)
        other = complex(transform_grid(wide, hbar, fin, ini, inverse=inverse).ravel()[0])
        scale = max(abs(value), abs(other))
        if scale > 0 and abs(value - other) > rtol * scale:
            raise QuadratureNoConvergence(
                f"doubling the window changes the transform by {abs(value - other) / scale:.3g} (> {rtol:g})"
            )
    return value


def partial_ft_direct(G: GridFunction, hbar: float, p_final, p_initial, *, rtol: float | None = 1e-3,
                      refine=None) -> complex:
    """Partial Fourier transform of sampled ``G`` to momenta (p'', p') on the transformed axes.

    Parameters
    ----------
    G : GridFunction
        Samples over (q''_alpha, q'_alpha) with the untransformed coordinates fixed.
    hbar : float
    p_final, p_initial : float or sequence of k floats
    rtol : float or None
        Convergence tolerance. The value is recomputed at half the grid
        density and, when ``refine`` is given, on ``refine(G)`` (a grid with
        doubled window); a relative change above ``rtol`` raises
        QuadratureNoConvergence. ``None`` skips the checks.
    refine : callable, optional
        Maps a GridFunction to a resampled one with a wider window.
    """
    return _checked(G, hbar, p_final, p_initial, False, rtol, refine)


def inverse_partial_ft(F: GridFunction, hbar: float, q_final, q_initial, *, rtol: float | None = 1e-3,
                       refine=None) -> complex:
    """Inverse of :func:`partial_ft_direct`: samples over (p''_alpha, p'_alpha) back to positions."""
    return _checked(F, hbar, q_final, q_initial, True, rtol, refine)


def uniformize(G_primitive, G_transformed, caustic_metric, threshold: float = 1e3, width: float = 1.0) -> np.ndarray:
    """Blend ``w G_transformed + (1 - w) G_primitive``.

    ``w`` is 0 wherever ``|D_s| <= threshold`` and ramps smoothly to 1 as
    ``log10 |D_s|`` grows by ``width`` decades. Infinite or undefined metric
    values count as caustic points (``w = 1``), and the primitive value there
    is ignored.
    """
    Gp = np.asarray(G_primitive, complex)
    Gt = np.asarray(G_transformed, complex)
    D = np.asarray(caustic_metric, float)
    if Gp.shape != Gt.shape or Gp.shape != D.shape:
        raise DimensionError(f"grids differ: {Gp.shape}, {Gt.shape}, {D.shape}")
    if not threshold > 0 or not width > 0:
        raise ConfigError("threshold and width must be positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (np.log10(np.abs(D)) - np.log10(threshold)) / width
    x = np.where(np.isfinite(x), x, np.where(np.isneginf(x), 0.0, 1.0))
    s = np.clip(x, 0.0, 1.0)
    w = 0.5 * (1.0 - np.cos(np.pi * s))
    return np.where(w == 1.0, Gt, np.where(w == 0.0, Gp, w * Gt + (1.0 - w) * Gp))


# ---------------------------------------------------------------- sampling


def sample_greens(model: ModelSpec, rep: Representation, axes, fixed_final, fixed_initial, energy: float,
                  hbar: float, params: SearchParams, *, coords=None, **kwargs) -> GridFunction:
    """Semiclassical Green function on a grid of representation coordinates.

    ``axes`` lists (min, max, count) for the final then the initial values of
    the coordinates ``coords`` (default ``rep.alpha``); the other coordinates
    are held at ``fixed_final`` and ``fixed_initial``. Each grid point is one
    boundary problem solved by :func:`greens.assemble_many`.
    """
    gridded = list(rep.alpha if coords is None else coords)
    k = len(gridded)
    if k == 0 or len(axes) != 2 * k:
        raise DimensionError(f"need 2 axes per gridded coordinate, got {len(axes)} for {gridded}")
    grids = [np.linspace(lo, hi, int(c)) for lo, hi, c in axes]
    mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, 2 * k)
    held = [i for i in range(model.n) if i not in gridded]
    fixed_f = np.asarray(fixed_final, float)
    fixed_i = np.asarray(fixed_initial, float)
    if fixed_f.size != len(held) or fixed_i.size != len(held):
        raise DimensionError(f"need {len(held)} fixed values per end")

    def values(g_vals, h_vals):
        v = np.empty(model.n)
        v[gridded] = g_vals
        v[held] = h_vals
        return tuple(v)

    bcs = [BoundaryCondition(rep, values(m[k:], fixed_i), values(m[:k], fixed_f), energy) for m in mesh]
    out = assemble_many(model, bcs, hbar, params, **kwargs)
    vals = np.array([g.value for g in out]).reshape(tuple(len(g) for g in grids))
    return GridFunction(rep, tuple(axes), np.nan_to_num(vals))


@dataclass(frozen=True)
class FamilySample:
    """Output of :func:`sample_greens_1d`.

    ``values[i, j]`` is the Green function from ``initial[j]`` to ``final[i]``;
    ``caustic_metric[i, j]`` the largest |D| among its contributions (0 when
    there are none).  ``terms`` lists every contribution as
    (i, j, t_f, x0, xf, term).
    """

    values: np.ndarray
    caustic_metric: np.ndarray
    terms: list


def _hermite(y0, y1, d0, d1, h, s):
    # cubic Hermite on [0, h] at fraction s
    s2, s3 = s * s, s * s * s
    return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * d0 + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * d1


def _hermite_root(y0, y1, d0, d1, h, iters=8):
    # Newton on the cubic, started from the secant, kept inside the bracket
    s = np.where(y1 != y0, y0 / (y0 - y1), 0.5)
    for _ in range(iters):
        s2 = s * s
        f = _hermite(y0, y1, d0, d1, h, s)
        df = (6 * s2 - 6 * s) * y0 + (3 * s2 - 4 * s + 1) * h * d0 + (-6 * s2 + 6 * s) * y1 + (3 * s2 - 2 * s) * h * d1
        s = np.clip(s - np.where(df != 0, f / np.where(df != 0, df, 1.0), 0.0), 0.0, 1.0)
    return s


def sample_greens_1d(
    model: ModelSpec,
    rep: Representation,
    initial,
    final,
    energy: float,
    hbar: float,
    t_max: float,
    *,
    eta: float = 0.0,
    exponent: float | None = None,
    dt: float = 0.02,
    t_min: float = 1e-6,
    step: float = 0.25,
    max_maslov: int | None = None,
    min_maslov: int = 0,
) -> FamilySample:
    """Green function of a 1-D model on the product of ``final`` x ``initial`` points.

    Each initial value is launched once per direction and integrated to
    ``t_max``; every final value is then located along the same solution by
    cubic Hermite interpolation on a uniform time grid of spacing ``dt``.
    The amplitude is ``|D| = 1/|ydot' ydot''|`` and the Maslov index counts the
    sign changes of ``ydot`` before arrival, where ``y`` is the representation
    coordinate. ``min_maslov`` and ``max_maslov`` keep only contributions
    whose caustic count lies in that range, which selects whole branches
    instead of cutting them at ``t_max``.
    """
    if model.n != 1:
        raise DimensionError("sample_greens_1d handles one degree of freedom")
    if not hbar > 0 or not t_max > 0 or not dt > 0:
        raise ConfigError("hbar, t_max and dt must be positive")
    initial = np.atleast_1d(np.asarray(initial, float))
    final = np.atleast_1d(np.asarray(final, float))
    row = int(rep.rows[0])
    mom = bool(rep.is_momentum[0])
    pref = prefactor(1, hbar, exponent)

    launches, owner = [], []
    for j, a in enumerate(initial):
        seen = []
        for theta in (0.0, np.pi):
            try:
                ln = launch(model, rep, [a], energy, theta)
            except DomainError:
                ln = None
            if ln is None or any(np.array_equal(ln.x0, s) for s in seen):
                continue
            seen.append(ln.x0)
            launches.append(ln.x0)
            owner.append(j)

    values = np.zeros((final.size, initial.size), complex)
    metric = np.zeros((final.size, initial.size))
    terms = []
    if not launches:
        return FamilySample(values, metric, terms)

    N = max(2, int(np.ceil(t_max / dt)))
    T = np.linspace(0.0, t_max, N + 1)
    h = T[1] - T[0]
    X0 = np.array(launches)
    for start in range(0, len(X0), 256):
        prop = propagate(model, X0[start : start + 256], t_max, step)
        Y = prop.augmented_all(T)
        for b in range(Y.shape[0]):
            j = owner[start + b]
            xs = Y[b, :, :2]
            S = Y[b, :, -1]
            F = flow_batch(model, xs)
            y, yd = xs[:, row], F[:, row]
            Sd = xs[:, 1] * F[:, 0]
            # caustics: sign changes of ydot after t=0, located linearly
            sgn = np.sign(yd)
            ci = np.flatnonzero((sgn[1:-1] * sgn[2:] < 0) | (sgn[2:] == 0)) + 1
            caus = T[ci] + h * yd[ci] / np.where(yd[ci] != yd[ci + 1], yd[ci] - yd[ci + 1], 1.0)
            r = y[None, :] - final[:, None]
            i_idx, k_idx = np.nonzero((r[:, :-1] * r[:, 1:] < 0) | ((r[:, 1:] == 0) & (r[:, :-1] != 0)))
            if i_idx.size == 0:
                continue
            s = _hermite_root(r[i_idx, k_idx], r[i_idx, k_idx + 1], yd[k_idx], yd[k_idx + 1], h)
            tf = T[k_idx] + s * h
            keep = tf >= t_min
            i_idx, k_idx, s, tf = i_idx[keep], k_idx[keep], s[keep], tf[keep]
            xf = np.stack(
                [_hermite(xs[k_idx, c], xs[k_idx + 1, c], F[k_idx, c], F[k_idx + 1, c], h, s) for c in (0, 1)],
                axis=-1,
            )
            xf[:, row] = final[i_idx]
            Sf = _hermite(S[k_idx], S[k_idx + 1], Sd[k_idx], Sd[k_idx + 1], h, s)
            x0 = xs[0]
            if mom:
                Sf = Sf + x0[1] * x0[0] - xf[:, 1] * xf[:, 0]
            ydf = flow_batch(model, xf)[:, row]
            mu = np.searchsorted(caus, tf)
            if max_maslov is not None or min_maslov > 0:
                ok = (mu >= min_maslov) & (mu <= (np.inf if max_maslov is None else max_maslov))
                i_idx, tf, xf, Sf, ydf, mu = i_idx[ok], tf[ok], xf[ok], Sf[ok], ydf[ok], mu[ok]
            with np.errstate(divide="ignore"):
                D = 1.0 / np.abs(yd[0] * ydf)
            term = pref * np.sqrt(D) * np.exp(1j * (Sf / hbar - mu * np.pi / 2) - eta * tf / hbar)
            np.add.at(values[:, j], i_idx, np.where(np.isfinite(term), term, 0.0))
            np.maximum.at(metric[:, j], i_idx, D)
            terms.extend(
                (int(i), j, float(t), tuple(x0), tuple(xx), complex(v))
                for i, t, xx, v in zip(i_idx, tf, xf, term)
            )
    return FamilySample(values, metric, terms)


# ---------------------------------------------------------------- serialization


def grid_to_json(G: GridFunction) -> dict:
    return {
        "rep": list(G.rep.alpha),
        "n": G.rep.n,
        "axes": [list(a) for a in G.axes],
        "re": G.values.real.tolist(),
        "im": G.values.imag.tolist(),
    }


def grid_from_json(data: dict) -> GridFunction:
    rep = Representation(int(data["n"]), tuple(data["rep"]))
    values = np.asarray(data["re"], float) + 1j * np.asarray(data["im"], float)
    return GridFunction(rep, tuple(tuple(a) for a in data["axes"]), values)


def grid_to_csv(G: GridFunction) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(len(G.axes))] + ["re", "im"])
    mesh = np.meshgrid(*G.grids, indexing="ij")
    for idx in np.ndindex(G.values.shape):
        v = G.values[idx]
        w.writerow([f"{m[idx]:.17g}" for m in mesh] + [f"{v.real:.17g}", f"{v.imag:.17g}"])
    return buf.getvalue()

