"""Functions on (0, pi): quadrature grid, inner products, norms and log-domain magnitudes.

Everything that can reach ``exp(pi*|Im lambda|)`` is carried as a logarithm so
that scans stay finite far beyond the double-precision overflow threshold
(roughly ``|Im lambda| > 225``).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import DomainError, GridMismatchError

#: half-plane overlap constant: upper requires Im > -R_OVERLAP, lower Im < R_OVERLAP
R_OVERLAP = 1.0
#: modulus threshold of the asymptotic half-planes
LAMBDA0 = 1.0
#: minimum number of panels in the automatic panel rule
MIN_PANELS = 64
DEFAULT_NODES_PER_PANEL = 16


# ---------------------------------------------------------------------------
# reference Gauss-Legendre panel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ReferencePanel:
    nodes: np.ndarray
    weights: np.ndarray
    integration: np.ndarray  # S[i, j] = int_{-1}^{x_i} l_j(t) dt
    differentiation: np.ndarray  # D[i, j] = l_j'(x_i)
    left: np.ndarray  # l_j(-1)
    right: np.ndarray  # l_j(+1)


@functools.lru_cache(maxsize=None)
def reference_panel(n: int) -> _ReferencePanel:
    """Gauss-Legendre nodes on [-1, 1] with interpolation-based panel operators."""
    x, w = npleg.leggauss(n)
    vander = npleg.legvander(x, n - 1)
    coeffs = np.linalg.inv(vander)  # column j: Legendre coefficients of l_j
    integ = np.empty((n, n))
    diff = np.empty((n, n))
    for j in range(n):
        c = coeffs[:, j]
        integ[:, j] = npleg.legval(x, npleg.legint(c, lbnd=-1.0))
        diff[:, j] = npleg.legval(x, npleg.legder(c))
    left = npleg.legval(-1.0, coeffs)
    right = npleg.legval(1.0, coeffs)
    for arr in (x, w, integ, diff, left, right):
        arr.setflags(write=False)
    return _ReferencePanel(x, w, integ, diff, left, right)


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Composite Gauss-Legendre grid on [0, pi].

    Two grids compare equal when they have the same panel layout, which is
    what "sharing a grid" means for inner products.
    """

    panel_count: int
    nodes_per_panel: int = DEFAULT_NODES_PER_PANEL
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)
    edges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.panel_count < 1 or self.nodes_per_panel < 2:
            raise ValueError("grid needs at least one panel and two nodes per panel")
        ref = reference_panel(self.nodes_per_panel)
        edges = np.linspace(0.0, np.pi, self.panel_count + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + half[:, None] * ref.nodes[None, :]).ravel()
        weights = (half[:, None] * ref.weights[None, :]).ravel()
        for arr in (nodes, weights, edges):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def for_lambda(cls, lam_max, nodes_per_panel=DEFAULT_NODES_PER_PANEL) -> "Grid":
        """Grid resolving ``exp(+-2i lambda x)`` for every ``|lambda|`` up to ``lam_max``."""
        lam_max = complex(lam_max)
        scale = math.ceil(abs(lam_max.real) + abs(lam_max.imag))
        return cls(max(MIN_PANELS, 4 * scale), nodes_per_panel)

    @property
    def size(self) -> int:
        return self.panel_count * self.nodes_per_panel

    @property
    def panel_width(self) -> float:
        return np.pi / self.panel_count

    @property
    def reference(self) -> _ReferencePanel:
        return reference_panel(self.nodes_per_panel)

    def panels(self, values: np.ndarray) -> np.ndarray:
        """View of node values with shape (panel_count, nodes_per_panel, ...)."""
        values = np.asarray(values)
        return values.reshape((self.panel_count, self.nodes_per_panel) + values.shape[1:])

    def integrate(self, values) -> complex:
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))

    def derivative(self, values) -> np.ndarray:
        """Panel-wise derivative of the polynomial interpolant."""
        ref = self.reference
        local = np.einsum("ij,pj...->pi...", ref.differentiation, self.panels(values))
        return (local / (0.5 * self.panel_width)).reshape(np.shape(values))

    def endpoint_values(self, values):
        """Interpolant extrapolated to x = 0 and x = pi."""
        ref = self.reference
        p = self.panels(values)
        return (
            np.tensordot(ref.left, p[0], axes=(0, 0)),
            np.tensordot(ref.right, p[-1], axes=(0, 0)),
        )

    def sample(self, func) -> np.ndarray:
        return np.broadcast_to(np.asarray(func(self.nodes), dtype=complex), self.nodes.shape).copy()


# ---------------------------------------------------------------------------
# grid functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridFunction2:
    """A pair ``col(f1, f2)`` of complex functions sampled on a grid."""

    component1: np.ndarray
    component2: np.ndarray
    grid: Grid

    def __post_init__(self):
        c1 = np.asarray(self.component1, dtype=complex)
        c2 = np.asarray(self.component2, dtype=complex)
        n = self.grid.size
        if c1.shape != (n,) or c2.shape != (n,):
            raise ValueError(f"components must have shape ({n},), got {c1.shape} and {c2.shape}")
        object.__setattr__(self, "component1", c1)
        object.__setattr__(self, "component2", c2)

    @classmethod
    def from_callables(cls, grid: Grid, f1, f2) -> "GridFunction2":
        return cls(grid.sample(f1), grid.sample(f2), grid)

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction2":
        return cls(np.zeros(grid.size, complex), np.zeros(grid.size, complex), grid)

    def _check(self, other: "GridFunction2"):
        if self.grid != other.grid:
            raise GridMismatchError(f"grid functions live on distinct grids: {self.grid} vs {other.grid}")

    def __add__(self, other):
        self._check(other)
        return GridFunction2(self.component1 + other.component1, self.component2 + other.component2, self.grid)

    def __sub__(self, other):
        self._check(other)
        return GridFunction2(self.component1 - other.component1, self.component2 - other.component2, self.grid)

    def __mul__(self, scalar):
        return GridFunction2(scalar * self.component1, scalar * self.component2, self.grid)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return GridFunction2(self.component1 / scalar, self.component2 / scalar, self.grid)

    def endpoints(self):
        """Boundary vector ``(f1(0), f2(0), f1(pi), f2(pi))``."""
        l1, r1 = self.grid.endpoint_values(self.component1)
        l2, r2 = self.grid.endpoint_values(self.component2)
        return np.array([l1, l2, r1, r2], dtype=complex)

    def sup(self) -> float:
        return float(max(np.max(np.abs(self.component1)), np.max(np.abs(self.component2))))


# ---------------------------------------------------------------------------
# log-domain scalars
# ---------------------------------------------------------------------------


@functools.total_ordering
@dataclass(frozen=True)
class LogMagnitude:
    """A nonnegative magnitude stored as its natural logarithm (-inf encodes zero)."""

    log_value: float

    @classmethod
    def of(cls, value) -> "LogMagnitude":
        value = abs(value)
        return cls(math.log(value) if value > 0 else -math.inf)

    @property
    def value(self) -> float:
        """Linear value; ``inf`` when it is not representable."""
        if self.log_value > 709.78:
            return math.inf
        return math.exp(self.log_value)

    @property
    def representable(self) -> bool:
        return self.log_value <= 709.78

    def sqrt(self) -> "LogMagnitude":
        return LogMagnitude(0.5 * self.log_value)

    def __mul__(self, other):
        if isinstance(other, LogMagnitude):
            return LogMagnitude(self.log_value + other.log_value)
        return self * LogMagnitude.of(other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, LogMagnitude):
            other = LogMagnitude.of(other)
        return LogMagnitude(self.log_value - other.log_value)

    def __add__(self, other):
        if not isinstance(other, LogMagnitude):
            other = LogMagnitude.of(other)
        return LogMagnitude(float(np.logaddexp(self.log_value, other.log_value)))

    def __lt__(self, other):
        return self.log_value < other.log_value


@dataclass(frozen=True)
class ScaledComplex:
    """``mantissa * exp(log_scale)`` with an O(1) complex mantissa."""

    mantissa: complex
    log_scale: float = 0.0

    @property
    def value(self) -> complex:
        if self.mantissa == 0:
            return 0j
        log_abs = self.log_abs
        if log_abs > 709.78:
            return complex(math.inf, math.inf)
        return self.mantissa * math.exp(self.log_scale)

    @property
    def log_abs(self) -> float:
        m = abs(self.mantissa)
        return math.log(m) + self.log_scale if m > 0 else -math.inf

    def magnitude(self) -> LogMagnitude:
        return LogMagnitude(self.log_abs)

    @property
    def phase(self) -> float:
        return float(np.angle(self.mantissa))

    def __mul__(self, other):
        if isinstance(other, ScaledComplex):
            return ScaledComplex(self.mantissa * other.mantissa, self.log_scale + other.log_scale)
        return ScaledComplex(self.mantissa * other, self.log_scale)

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, ScaledComplex):
            other = ScaledComplex(complex(other))
        top = max(self.log_scale, other.log_scale)
        if top == -math.inf:
            return ScaledComplex(0j, 0.0)
        return ScaledComplex(
            self.mantissa * math.exp(self.log_scale - top) + other.mantissa * math.exp(other.log_scale - top),
            top,
        )


def log_exp_integral(a: float) -> float:
    """``log of int_0^pi exp(a t) dt`` without overflow; ``log(pi)`` at ``a = 0``."""
    if abs(a) * math.pi < 1e-6:
        # series of log((exp(a pi) - 1) / a); also avoids subnormal rounding of a * pi
        u = a * math.pi
        return math.log(math.pi) + u / 2 + u * u / 24
    if a > 0:
        return a * math.pi + math.log(-math.expm1(-a * math.pi)) - math.log(a)
    return math.log(-math.expm1(a * math.pi)) - math.log(-a)


def logsumexp_weighted(log_terms: np.ndarray, weights: np.ndarray) -> float:
    """``log(sum(weights * exp(log_terms)))`` for nonnegative weights."""
    log_terms = np.asarray(log_terms, dtype=float)
    mask = np.isfinite(log_terms) & (weights > 0)
    if not mask.any():
        return -math.inf
    top = log_terms[mask].max()
    return float(top + math.log(np.sum(weights[mask] * np.exp(log_terms[mask] - top))))


# ---------------------------------------------------------------------------
# spectral parameter
# ---------------------------------------------------------------------------

UPPER = "upper"
LOWER = "lower"


@dataclass(frozen=True)
class SpectralParameter:
    """Complex spectral parameter tagged with the asymptotic half-plane used."""

    lam: complex
    half_plane: str = UPPER
    r: float = R_OVERLAP

    def __post_init__(self):
        object.__setattr__(self, "lam", complex(self.lam))
        if self.half_plane not in (UPPER, LOWER):
            raise ValueError(f"half_plane must be {UPPER!r} or {LOWER!r}")
        if self.half_plane == UPPER and not self.tau > -self.r:
            raise DomainError(f"Im lambda = {self.tau} is not in the upper half-plane (Im > {-self.r})")
        if self.half_plane == LOWER and not self.tau < self.r:
            raise DomainError(f"Im lambda = {self.tau} is not in the lower half-plane (Im < {self.r})")

    @classmethod
    def of(cls, lam, half_plane=None) -> "SpectralParameter":
        if isinstance(lam, SpectralParameter):
            return lam
        lam = complex(lam)
        if half_plane is None:
            half_plane = UPPER if lam.imag >= 0 else LOWER
        return cls(lam, half_plane)

    @property
    def tau(self) -> float:
        return self.lam.imag

    @property
    def sigma(self) -> float:
        return self.lam.real

    def conjugate(self) -> "SpectralParameter":
        """``conj(lambda)`` in the mirrored half-plane."""
        return SpectralParameter(self.lam.conjugate(), LOWER if self.half_plane == UPPER else UPPER, self.r)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def inner_product(f: GridFunction2, g: GridFunction2) -> complex:
    """``<f, g> = int_0^pi (f1 conj(g1) + f2 conj(g2)) dx`` by composite Gauss-Legendre."""
    f._check(g)
    w = f.grid.weights
    return complex(np.dot(w, f.component1 * np.conj(g.component1)) + np.dot(w, f.component2 * np.conj(g.component2)))


def h_norm(f: GridFunction2) -> LogMagnitude:
    top = f.sup()
    if top == 0.0:
        return LogMagnitude(-math.inf)
    w = f.grid.weights
    s = np.dot(w, np.abs(f.component1 / top) ** 2) + np.dot(w, np.abs(f.component2 / top) ** 2)
    return LogMagnitude(math.log(top) + 0.5 * math.log(s))


def exp_l2_norm(lam, sign: str) -> LogMagnitude:
    """Closed-form ``||exp(+-i lambda t)||`` in L2(0, pi)."""
    tau = SpectralParameter.of(lam).tau if isinstance(lam, SpectralParameter) else complex(lam).imag
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    a = -2.0 * tau if sign == "+" else 2.0 * tau
    return LogMagnitude(0.5 * log_exp_integral(a))
