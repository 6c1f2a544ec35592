"""Reference Green functions and comparison reports.

The oscillator oracle is an eigenfunction sum. Summed naively it converges
like N^(-1/2); here the sum is subtracted at E = 0, where the Green function is
an absolutely convergent imaginary-time integral of the Mehler kernel, and the
remainder decays like N^(-3/2).
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import ConfigError, DomainError, PoleProximity, TruncationError

__all__ = [
    "exact_free_particle_G",
    "free_particle_spectral_integral",
    "hermite_functions",
    "ho_spectral_G",
    "ho_imaginary_time_G",
    "ComparisonPoint",
    "ComparisonReport",
    "compare",
]


def exact_free_particle_G(q1: float, q2: float, E: float, m: float = 1.0, hbar: float = 1.0) -> complex:
    """Outgoing-wave Green function of E - p^2/2m in one dimension, from q1 to q2."""
    if not E > 0:
        raise DomainError("free-particle Green function needs E > 0")
    k = np.sqrt(2 * m * E) / hbar
    return complex(-1j * m / (hbar**2 * k) * np.exp(1j * k * abs(q2 - q1)))


def free_particle_spectral_integral(q1: float, q2: float, E: float, m: float = 1.0, hbar: float = 1.0) -> complex:
    """``int dp/(2 pi hbar) exp(i p dq/hbar) / (E + i0 - p^2/2m)`` by numerical quadrature.

    The i0 prescription splits the integral into a principal value (Cauchy-weighted
    quadrature near the pole, Fourier-weighted quadrature for the tail) and the
    pole term ``-i pi delta(E - p^2/2m)``.
    """
    if not E > 0:
        raise DomainError("free-particle Green function needs E > 0")
    a = abs(q2 - q1) / hbar
    p0 = np.sqrt(2 * m * E)
    # 1/(E - p^2/2m) = -2m / ((p - p0)(p + p0)); integrand is even in p
    near, _ = quad(lambda p: -2 * m * np.cos(p * a) / (p + p0), 0.0, 2 * p0, weight="cauchy", wvar=p0,
                   epsabs=1e-14, epsrel=1e-13, limit=200)
    if a > 0:
        # QAWF flags the slow 1/p^2 tail per cycle although the sum is accurate
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            tail, tail_s = _fourier_tail(E, m, p0, a)
        tail = tail * np.cos(2 * a * p0) - tail_s * np.sin(2 * a * p0)
    else:
        tail, _ = quad(lambda p: 1.0 / (E - p * p / (2 * m)), 2 * p0, np.inf, epsabs=1e-14, epsrel=1e-13)
    principal = 2 * (near + tail) / (2 * np.pi * hbar)
    pole = -1j * m * np.cos(p0 * a) / (hbar * p0)
    return complex(principal + pole)


def _fourier_tail(E, m, p0, a):
    # shifted so the integrand is smooth from 0: cos(a (p + 2 p0)) expands into cos and sin parts
    f = lambda p: 1.0 / (E - (p + 2 * p0) ** 2 / (2 * m))
    c, _ = quad(f, 0.0, np.inf, weight="cos", wvar=a, epsabs=1e-14, limlst=200)
    s, _ = quad(f, 0.0, np.inf, weight="sin", wvar=a, epsabs=1e-14, limlst=200)
    return c, s


def hermite_functions(x: float, n_max: int, m: float = 1.0, omega: float = 1.0, hbar: float = 1.0) -> np.ndarray:
    """Oscillator eigenfunctions phi_0..phi_{n_max-1} at x by the stable three-term recurrence."""
    xi = x * np.sqrt(m * omega / hbar)
    phi = np.empty(n_max)
    phi[0] = (m * omega / (np.pi * hbar)) ** 0.25 * np.exp(-0.5 * xi * xi)
    if n_max > 1:
        phi[1] = np.sqrt(2.0) * xi * phi[0]
    for k in range(1, n_max - 1):
        phi[k + 1] = np.sqrt(2.0 / (k + 1)) * xi * phi[k] - np.sqrt(k / (k + 1)) * phi[k - 1]
    return phi


def ho_imaginary_time_G(q1, q2, m=1.0, omega=1.0, hbar=1.0) -> float:
    """G(q2, q1, E=0) = -(1/hbar) int_0^inf K_euclid(q2, q1, tau) dtau."""

    def kernel(u):
        tau = u * u
        if tau == 0:
            return 0.0 if q1 != q2 else 2 * np.sqrt(m / (2 * np.pi * hbar))
        # coth and csch written via exp(-2 w tau) so large tau cannot overflow
        z = np.exp(-2 * omega * tau)
        coth = (1 + z) / (1 - z)
        csch = 2 * np.sqrt(z) / (1 - z)
        expo = -m * omega * ((q1 * q1 + q2 * q2) * coth - 2 * q1 * q2 * csch) / (2 * hbar)
        return 2 * u * np.sqrt(m * omega * csch / (2 * np.pi * hbar)) * np.exp(expo)

    val, _ = quad(kernel, 0.0, np.inf, epsabs=1e-15, epsrel=1e-13, limit=400)
    return -val / hbar


def ho_spectral_G(
    q1: float,
    q2: float,
    E: complex,
    m: float = 1.0,
    omega: float = 1.0,
    hbar: float = 1.0,
    n_terms: int = 256,
    tol: float = 1e-6,
    max_terms: int = 1 << 18,
) -> complex:
    """Eigenfunction sum ``sum phi_n(q1) phi_n(q2) / (E - E_n)`` for the 1-D oscillator.

    ``E`` may be complex (E + i eta). ``n_terms`` is the initial truncation; it
    is doubled until the relative change falls below ``tol``.
    """
    if n_terms < 64:
        raise ConfigError("n_terms must be >= 64")
    E = complex(E)
    levels_gap = hbar * omega
    nearest = np.round(E.real / levels_gap - 0.5)
    if abs(E.imag) == 0 and nearest >= 0 and abs(E - levels_gap * (nearest + 0.5)) < 1e-3 * levels_gap:
        raise PoleProximity(f"E={E} is within 1e-3 hbar omega of a level")
    g0 = ho_imaginary_time_G(q1, q2, m, omega, hbar)

    def partial(N):
        a = hermite_functions(q1, N, m, omega, hbar)
        b = hermite_functions(q2, N, m, omega, hbar)
        En = levels_gap * (np.arange(N) + 0.5)
        # 1/(E-En) - 1/(0-En) = E / ((E-En) En)
        return g0 + np.sum(a * b * E / ((E - En) * En))

    N = n_terms
    prev = partial(N)
    while N < max_terms:
        N *= 2
        cur = partial(N)
        if abs(cur - prev) <= tol * abs(cur):
            return complex(cur)
        prev = cur
    raise TruncationError(f"eigenfunction sum not converged at {N} terms")


@dataclass
class ComparisonPoint:
    input: object
    reference: complex
    computed: complex
    abs_err: float
    rel_err: float


@dataclass
class ComparisonReport:
    points: list[ComparisonPoint]
    max_rel_err: float
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "points": [
                    {
                        "input": p.input,
                        "reference": [p.reference.real, p.reference.imag],
                        "computed": [p.computed.real, p.computed.imag],
                        "abs_err": p.abs_err,
                        "rel_err": p.rel_err,
                    }
                    for p in self.points
                ],
                "max_rel_err": self.max_rel_err,
                "notes": self.notes,
            },
            indent=2,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["input", "ref_re", "ref_im", "comp_re", "comp_im", "abs_err", "rel_err"])
        for p in self.points:
            w.writerow(
                [json.dumps(p.input)]
                + [f"{v:.17g}" for v in (p.reference.real, p.reference.imag, p.computed.real, p.computed.imag,
                                          p.abs_err, p.rel_err)]
            )
        return buf.getvalue()


def compare(computed, reference, tol: float | None = None) -> ComparisonReport:
    """Compare ``[(input, value), ...]`` against ``reference(input) -> complex``."""
    computed = list(computed)
    if not computed:
        raise ConfigError("nothing to compare")
    points = []
    for inp, val in computed:
        ref = complex(reference(inp))
        val = complex(val)
        err = abs(val - ref)
        rel = err / abs(ref) if ref != 0 else (0.0 if err == 0 else np.inf)
        points.append(ComparisonPoint(inp, ref, val, err, rel))
    worst = max(p.rel_err for p in points)
    notes = [] if tol is None else [f"{'pass' if worst <= tol else 'fail'} at tol={tol:g}"]
    return ComparisonReport(points, worst, notes)
