"""Problem parameterization and grid/field data model.

Everything downstream works in terms of these types: the problem indices
(n, p, s and the derived critical order s0), logarithmic radial grids with
r^{n-1} dr quadrature weights, and periodic box lattices for the
low-dimensional concentration experiments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RMIN_FRACTION = 2.5e-6  # default r_min = r_max * this (1e-3 at r_max = 400)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemParams:
    """Dimension n, exponent p, fractional order s, and derived indices."""

    n: int
    p: float
    s: float

    @property
    def s0(self) -> float:
        return (self.p - 2.0) * self.n / (2.0 * self.p)

    @property
    def alpha_s(self) -> float:
        return 2.0 * self.s / (self.p - 2.0)

    @property
    def two_star_s(self) -> float:
        if self.s >= self.n / 2.0:
            raise ModelError(f"2*_s undefined: s={self.s} >= n/2={self.n / 2}")
        return 2.0 * self.n / (self.n - 2.0 * self.s)

    @property
    def exists(self) -> bool:
        """True in the regime where a ground state is attained (s0 < s < 1]."""
        return self.s > self.s0


def make_params(n: int, p: float, s: float) -> ProblemParams:
    if int(n) != n or n < 2:
        raise ModelError(f"n must be an integer >= 2, got {n}")
    n = int(n)
    if p <= 2:
        raise ModelError(f"p must exceed 2, got {p}")
    if n >= 3 and p >= 2.0 * n / (n - 2.0):
        raise ModelError(f"p={p} is not below the critical exponent 2n/(n-2)={2 * n / (n - 2)}")
    if not (0.0 < s <= 1.0):
        raise ModelError(f"s must lie in (0, 1], got {s}")
    return ProblemParams(n=n, p=float(p), s=float(s))


@dataclass(frozen=True)
class RadialGrid:
    """Radial nodes with quadrature weights for integrals against r^{n-1} dr.

    Log mapping: r_i = r_max * exp(-kappa*(N-1-i)); the paired frequency
    nodes rho_j live on the reciprocal log lattice used by the transform
    plan. The algebraic mapping provides quadrature-only grids.
    """

    n: int
    N: int
    r: np.ndarray
    w: np.ndarray          # weights: sum(w * f) ~ int f(r) r^{n-1} dr
    rho: np.ndarray
    r_max: float
    r_min: float
    mapping: str
    kappa: float           # log spacing (0 for algebraic)

    def __post_init__(self):
        if not np.all(np.diff(self.r) > 0):
            raise ModelError("radial nodes must be strictly increasing")
        if self.r[0] <= 0:
            raise ModelError("radial nodes must be positive")

    @property
    def t(self) -> np.ndarray:
        return np.log(self.r)

    def quad(self, values: np.ndarray) -> float:
        """Quadrature of f against r^{n-1} dr from sampled values."""
        return float(np.dot(self.w, values))

    def key(self) -> tuple:
        return (self.n, self.N, float(self.r_max), self.mapping, float(self.r_min))


def build_radial_grid(n: int, N: int, r_max: float, mapping: str = "log",
                      r_min: float | None = None, tail_tol: float = 1e-6) -> RadialGrid:
    if N < 64:
        raise ModelError(f"N must be >= 64, got {N}")
    if r_max <= 1:
        raise ModelError(f"r_max must exceed 1, got {r_max}")
    if mapping not in ("log", "algebraic"):
        raise ModelError(f"unknown mapping {mapping!r}")
    # decaying reference profiles carry relative p-mass ~ r_max^{-n} past the
    # truncation radius; refuse grids that cannot meet the tail tolerance
    if r_max ** (-n) > tail_tol:
        raise ModelError(
            f"truncation too small: tail bound {r_max ** (-n):.2e} exceeds {tail_tol:.2e}")
    if r_min is None:
        r_min = r_max * RMIN_FRACTION
    if not (0 < r_min < r_max):
        raise ModelError(f"r_min must lie in (0, r_max), got {r_min}")

    if mapping == "log":
        t = np.linspace(np.log(r_min), np.log(r_max), N)
        r = np.exp(t)
        kappa = float(t[1] - t[0])
        # trapezoid in t against the measure r^n dt
        w = r ** n * kappa
        w[0] *= 0.5
        w[-1] *= 0.5
        # reciprocal frequency lattice: rho spans [1/r_max, ...] on the same
        # log spacing (FFTLog pairing)
        rho = np.exp(np.log(1.0 / r_max) + (t - t[0]))
    else:
        x = np.linspace(np.sqrt(r_min / r_max), 1.0, N)
        r = r_max * x * x
        kappa = 0.0
        # trapezoid on the nonuniform nodes against r^{n-1} dr
        w = np.zeros(N)
        dr = np.diff(r)
        rint = r ** (n - 1)
        w[:-1] += 0.5 * dr * rint[:-1]
        w[1:] += 0.5 * dr * rint[1:]
        rho = np.pi / r[::-1] / r_max * r_max  # nominal reciprocal nodes
        rho = np.sort(rho)
    return RadialGrid(n=int(n), N=int(N), r=r, w=w, rho=rho, r_max=float(r_max),
                      r_min=float(r_min), mapping=mapping, kappa=kappa)


@dataclass
class RadialField:
    """Sampled radial profile with an optional power-law tail hint.

    tail_hint is the exponent q of u ~ u(r_max) * (r/r_max)^q past the grid,
    used for analytic tail corrections of slowly converging norms.
    """

    grid: RadialGrid
    values: np.ndarray
    tail_hint: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.N,):
            raise ModelError(
                f"field shape {self.values.shape} does not match grid N={self.grid.N}")
        if not np.all(np.isfinite(self.values)):
            raise ModelError("field values must be finite")

    def copy(self) -> "RadialField":
        return RadialField(self.grid, self.values.copy(), self.tail_hint)


@dataclass(frozen=True)
class BoxGrid:
    """Periodic lattice on [-L, L)^n with M points per axis."""

    n: int
    L: float
    M: int
    axes: tuple = field(init=False, repr=False, default=())

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ModelError(f"box mode supports n in {{1, 2}}, got {self.n}")
        if self.M % 2 != 0 or self.M < 8:
            raise ModelError(f"M must be even and >= 8, got {self.M}")
        if self.L <= 0:
            raise ModelError("L must be positive")
        h = 2.0 * self.L / self.M
        ax = -self.L + h * np.arange(self.M)
        object.__setattr__(self, "axes", tuple(ax for _ in range(self.n)))

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.M

    def mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def freq_mag(self) -> np.ndarray:
        """|2 pi k| on the lattice frequencies (cycles per unit length)."""
        k1 = np.fft.fftfreq(self.M, d=self.h)
        if self.n == 1:
            return 2.0 * np.pi * np.abs(k1)
        kx, ky = np.meshgrid(k1, k1, indexing="ij")
        return 2.0 * np.pi * np.hypot(kx, ky)

    def cell_volume(self) -> float:
        return self.h ** self.n


@dataclass
class BoxField:
    grid: BoxGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        want = (self.grid.M,) * self.grid.n
        if self.values.shape != want:
            raise ModelError(f"field shape {self.values.shape} does not match {want}")
        if not np.all(np.isfinite(self.values)):
            raise ModelError("field values must be finite")

    def copy(self) -> "BoxField":
        return BoxField(self.grid, self.values.copy())


def build_box_grid(n: int, L: float, M: int) -> BoxGrid:
    return BoxGrid(n=int(n), L=float(L), M=int(M))
