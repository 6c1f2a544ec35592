"""Hamiltonian models with separable kinetic energy.

Every model is reduced internally to a polynomial potential

    V(q) = sum_k c_k * prod_i q_i**e_ki

so that the potential, its gradient and its Hessian are all evaluated by the
same exact monomial arithmetic. Phase-space states are laid out as
``x = (q_1..q_n, p_1..p_n)``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, DimensionError

__all__ = [
    "ModelKind",
    "ModelSpec",
    "PhasePoint",
    "Representation",
    "hamiltonian",
    "flow",
    "flow_jacobian",
    "monomial_exponents",
    "symplectic_form",
]


class ModelKind(str, enum.Enum):
    FREE_PARTICLE = "FreeParticle"
    HARMONIC_OSCILLATOR = "HarmonicOscillator"
    ANHARMONIC_QUARTIC = "AnharmonicQuartic"
    POLYNOMIAL_POTENTIAL = "PolynomialPotential"


def monomial_exponents(n: int, count: int) -> list[tuple[int, ...]]:
    """First `count` exponent tuples in graded lexicographic order.

    n=1: 1, q, q^2, ...
    n=2: 1, x, y, x^2, xy, y^2, x^3, x^2y, ...
    """
    out: list[tuple[int, ...]] = []
    degree = 0
    while len(out) < count:
        combos = [e for e in itertools.product(range(degree + 1), repeat=n) if sum(e) == degree]
        combos.sort(reverse=True)
        out.extend(combos)
        degree += 1
    return out[:count]


@dataclass(frozen=True)
class ModelSpec:
    """Time-independent Hamiltonian ``H = sum p_i^2/(2 m_i) + V(q)``.

    ``coefficients`` meaning depends on ``kind``:

    * AnharmonicQuartic: ``[lam]`` or ``[lam, coupling]`` giving
      ``V = sum(m w^2 q^2/2) + lam/4 sum q^4 + coupling q_1^2 q_2^2``;
      ``frequencies`` may be empty for a pure quartic well.
    * PolynomialPotential: monomial coefficients in graded lexicographic order
      (see :func:`monomial_exponents`).
    """

    kind: ModelKind
    n: int = 1
    mass: tuple[float, ...] = (1.0,)
    frequencies: tuple[float, ...] = ()
    coefficients: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.n not in (1, 2):
            raise ConfigError(f"n must be 1 or 2, got {self.n}")
        mass = tuple(float(m) for m in np.broadcast_to(np.asarray(self.mass, float), (self.n,)))
        if any(m <= 0 for m in mass):
            raise ConfigError("masses must be positive")
        object.__setattr__(self, "mass", mass)
        freqs = tuple(float(w) for w in self.frequencies)
        if self.kind is ModelKind.HARMONIC_OSCILLATOR and not freqs:
            raise ConfigError("HarmonicOscillator needs frequencies")
        if freqs:
            freqs = tuple(float(w) for w in np.broadcast_to(np.asarray(freqs), (self.n,)))
            if any(w <= 0 for w in freqs):
                raise ConfigError("frequencies must be positive")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.kind is ModelKind.ANHARMONIC_QUARTIC and len(self.coefficients) not in (1, 2):
            raise ConfigError("AnharmonicQuartic takes [lam] or [lam, coupling]")

    @classmethod
    def free(cls, n=1, mass=1.0):
        return cls(ModelKind.FREE_PARTICLE, n, (mass,) * n)

    @classmethod
    def oscillator(cls, n=1, mass=1.0, omega=1.0):
        omegas = tuple(np.broadcast_to(np.asarray(omega, float), (n,)))
        return cls(ModelKind.HARMONIC_OSCILLATOR, n, (mass,) * n, omegas)

    @classmethod
    def quartic(cls, n=1, mass=1.0, lam=1.0, omega=None, coupling=0.0):
        freqs = () if omega is None else tuple(np.broadcast_to(np.asarray(omega, float), (n,)))
        coeffs = (lam,) if n == 1 else (lam, coupling)
        return cls(ModelKind.ANHARMONIC_QUARTIC, n, (mass,) * n, freqs, coeffs)

    @cached_property
    def masses(self) -> np.ndarray:
        return np.asarray(self.mass)

    @cached_property
    def _terms(self) -> list[tuple[float, np.ndarray]]:
        terms: dict[tuple[int, ...], float] = {}

        def add(exp, c):
            terms[exp] = terms.get(exp, 0.0) + c

        unit = np.eye(self.n, dtype=int)
        if self.frequencies:
            for i, (m, w) in enumerate(zip(self.mass, self.frequencies)):
                add(tuple(2 * unit[i]), 0.5 * m * w * w)
        if self.kind is ModelKind.ANHARMONIC_QUARTIC:
            for i in range(self.n):
                add(tuple(4 * unit[i]), 0.25 * self.coefficients[0])
            if self.n == 2 and len(self.coefficients) == 2:
                add((2, 2), self.coefficients[1])
        elif self.kind is ModelKind.POLYNOMIAL_POTENTIAL:
            for exp, c in zip(monomial_exponents(self.n, len(self.coefficients)), self.coefficients):
                add(exp, c)
        return [(c, np.asarray(e)) for e, c in terms.items() if c != 0.0]

    # potential and derivatives; q has shape (..., n)

    def potential(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        v = np.zeros(q.shape[:-1])
        for c, e in self._terms:
            v = v + c * np.prod(q**e, axis=-1)
        return v

    @cached_property
    def _gradient_terms(self) -> list[list[tuple[float, np.ndarray]]]:
        out = []
        for i in range(self.n):
            row = []
            for c, e in self._terms:
                if e[i] > 0:
                    d = e.copy()
                    d[i] -= 1
                    row.append((c * e[i], d))
            out.append(row)
        return out

    @cached_property
    def _hessian_terms(self) -> list[list[list[tuple[float, np.ndarray]]]]:
        out = []
        for i in range(self.n):
            row = []
            for j in range(self.n):
                cell = []
                for c, d in self._gradient_terms[i]:
                    if d[j] > 0:
                        dd = d.copy()
                        dd[j] -= 1
                        cell.append((c * d[j], dd))
                row.append(cell)
            out.append(row)
        return out

    @staticmethod
    def _eval(q, terms):
        v = 0.0
        for c, e in terms:
            if not e.any():
                v = v + c
            else:
                v = v + c * np.prod(q**e, axis=-1)
        return np.broadcast_to(v, q.shape[:-1])

    def gradient(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        return np.stack([self._eval(q, t) for t in self._gradient_terms], axis=-1)

    def hessian(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        rows = [np.stack([self._eval(q, t) for t in r], axis=-1) for r in self._hessian_terms]
        return np.stack(rows, axis=-2)

    def potential_minimum(self) -> float:
        """Global minimum of V, used to reject energies with no classical motion."""
        if not self._terms:
            return 0.0
        if self.kind is not ModelKind.POLYNOMIAL_POTENTIAL and all(c >= 0 for c in self.coefficients):
            return 0.0
        from scipy.optimize import minimize

        best = np.inf
        for start in itertools.product((-2.0, -0.5, 0.0, 0.5, 2.0), repeat=self.n):
            res = minimize(lambda z: float(self.potential(z)), np.asarray(start),
                           jac=lambda z: self.gradient(z))
            best = min(best, float(res.fun))
        return best


@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.ndim != 1 or q.shape != p.shape:
            raise DimensionError(f"q and p must be equal-length vectors, got {q.shape} and {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ConfigError("phase point has non-finite components")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_array(cls, x) -> "PhasePoint":
        x = np.asarray(x, float)
        n = x.size // 2
        return cls(x[:n], x[n:])


@dataclass(frozen=True)
class Representation:
    """Mixed coordinates: momenta for indices in ``alpha``, positions for ``beta``.

    Indices are 0-based. Representation coordinates of a phase point are listed
    in coordinate-index order, ``y_i = p_i`` if ``i in alpha`` else ``q_i``.
    """

    n: int
    alpha: tuple[int, ...] = ()
    beta: tuple[int, ...] = field(default=None)

    def __post_init__(self):
        alpha = tuple(sorted(int(a) for a in self.alpha))
        beta = self.beta
        if beta is None:
            beta = tuple(i for i in range(self.n) if i not in alpha)
        beta = tuple(sorted(int(b) for b in beta))
        if set(alpha) & set(beta) or set(alpha) | set(beta) != set(range(self.n)) or len(
            alpha
        ) + len(beta) != self.n:
            raise ConfigError(f"alpha={alpha}, beta={beta} is not a partition of range({self.n})")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def k(self) -> int:
        return len(self.alpha)

    @property
    def key(self) -> str:
        return ",".join(str(a) for a in self.alpha)

    @classmethod
    def from_key(cls, n: int, key: str) -> "Representation":
        return cls(n, tuple(int(s) for s in key.split(",") if s.strip()))

    @classmethod
    def all(cls, n: int) -> list["Representation"]:
        return [cls(n, a) for r in range(n + 1) for a in itertools.combinations(range(n), r)]

    @cached_property
    def rows(self) -> np.ndarray:
        """Indices into the 2n state vector of the representation coordinates."""
        return np.array([self.n + i if i in self.alpha else i for i in range(self.n)])

    @cached_property
    def complement_rows(self) -> np.ndarray:
        """Indices of the conjugate (non-representation) coordinates."""
        return np.array([i if i in self.alpha else self.n + i for i in range(self.n)])

    @cached_property
    def is_momentum(self) -> np.ndarray:
        return np.array([i in self.alpha for i in range(self.n)])


def symplectic_form(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def _check(model: ModelSpec, x: PhasePoint):
    if x.n != model.n:
        raise DimensionError(f"phase point has n={x.n}, model has n={model.n}")


def hamiltonian(model: ModelSpec, x: PhasePoint) -> float:
    _check(model, x)
    return float(np.sum(x.p**2 / (2 * model.masses)) + model.potential(x.q))


def flow(model: ModelSpec, x: PhasePoint) -> np.ndarray:
    """Hamilton's equations ``(dH/dp, -dH/dq)``."""
    _check(model, x)
    return np.concatenate([x.p / model.masses, -model.gradient(x.q)])


def flow_jacobian(model: ModelSpec, x: PhasePoint) -> np.ndarray:
    _check(model, x)
    n = model.n
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.diag(1.0 / model.masses)
    A[n:, :n] = -model.hessian(x.q)
    return A


# batched helpers used by the integrator; x has shape (..., 2n)

def energy_batch(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    n = model.n
    return np.sum(x[..., n:] ** 2 / (2 * model.masses), axis=-1) + model.potential(x[..., :n])


def flow_batch(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    n = model.n
    return np.concatenate([x[..., n:] / model.masses, -model.gradient(x[..., :n])], axis=-1)


def energy_gradient_batch(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """dH/dx in (q, p) ordering."""
    n = model.n
    return np.concatenate([model.gradient(x[..., :n]), x[..., n:] / model.masses], axis=-1)
