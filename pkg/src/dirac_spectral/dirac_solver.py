"""Fundamental matrices of the Dirac system ``B y' + V y = lambda y`` and its adjoint.

Solutions are kept in factored form

    Y[j, k](x) = (delta_jk + b_jk(x)) * exp(+i lambda x)   (k = 1)
    Y[j, k](x) = (delta_jk + b_jk(x)) * exp(-i lambda x)   (k = 2)

with remainders ``b_jk`` obtained from Volterra integral equations whose kernels
never grow in the chosen half-plane.  Anchors in the upper half-plane are
``b11(0) = b12(0) = b22(0) = 0`` and ``b21(pi) = 0``; the lower half-plane uses
the mirror image (``b21(0) = 0``, ``b12(pi) = 0``).  Both choices give a
de-phased determinant identically equal to one.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from .errors import PicardDivergenceError
from .function_space import LOWER, UPPER, Grid, GridFunction2, SpectralParameter

PICARD_TOL = 1e-12
PICARD_MAX_ITER = 200
#: the dense fallback is skipped above this many grid nodes
DIRECT_MAX_NODES = 4096

DIRECT = "direct"
ADJOINT = "adjoint"


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


class Potential:
    """Off-diagonal potential ``V = ((0, P), (Q, 0))``."""

    is_zero = False

    def evaluate(self, x):
        """Return ``(P(x), Q(x))`` as complex arrays."""
        raise NotImplementedError

    def adjoint(self) -> "Potential":
        raise NotImplementedError

    def sample(self, grid: Grid):
        p, q = self.evaluate(grid.nodes)
        shape = grid.nodes.shape
        return (np.broadcast_to(p, shape).astype(complex), np.broadcast_to(q, shape).astype(complex))

    def l1_norms(self, grid: Grid | None = None):
        grid = grid or Grid(64)
        p, q = self.sample(grid)
        return float(grid.integrate(np.abs(p))), float(grid.integrate(np.abs(q)))


@dataclass(frozen=True)
class ZeroPotential(Potential):
    is_zero = True

    def evaluate(self, x):
        z = np.zeros(np.shape(x), complex)
        return z, z.copy()

    def adjoint(self):
        return self


@dataclass(frozen=True)
class ConstantPotential(Potential):
    p: complex
    q: complex

    def __post_init__(self):
        object.__setattr__(self, "p", complex(self.p))
        object.__setattr__(self, "q", complex(self.q))

    @property
    def is_zero(self):
        return self.p == 0 and self.q == 0

    def evaluate(self, x):
        shape = np.shape(x)
        return np.full(shape, self.p, complex), np.full(shape, self.q, complex)

    def adjoint(self):
        return ConstantPotential(self.q.conjugate(), self.p.conjugate())


def _coeff_tuple(coeffs):
    if isinstance(coeffs, Mapping):
        coeffs = coeffs.items()
    out = {}
    for k, c in coeffs:
        c = complex(c)
        if c != 0:
            out[int(k)] = out.get(int(k), 0j) + c
    return tuple(sorted(out.items()))


@dataclass(frozen=True)
class TrigPolyPotential(Potential):
    """``P(x) = sum_k p_k exp(i k x)``, ``Q(x) = sum_k q_k exp(i k x)``."""

    p_coeffs: tuple = ()
    q_coeffs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "p_coeffs", _coeff_tuple(self.p_coeffs))
        object.__setattr__(self, "q_coeffs", _coeff_tuple(self.q_coeffs))

    @property
    def is_zero(self):
        return not self.p_coeffs and not self.q_coeffs

    @staticmethod
    def _eval(coeffs, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, complex)
        for k, c in coeffs:
            out += c * np.exp(1j * k * x)
        return out

    def evaluate(self, x):
        return self._eval(self.p_coeffs, x), self._eval(self.q_coeffs, x)

    def adjoint(self):
        return TrigPolyPotential(
            tuple((-k, c.conjugate()) for k, c in self.q_coeffs),
            tuple((-k, c.conjugate()) for k, c in self.p_coeffs),
        )


@dataclass(frozen=True, eq=False)
class SampledPotential(Potential):
    """Piecewise-linear potential through samples covering [0, pi]."""

    nodes: np.ndarray
    p_values: np.ndarray
    q_values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        p = np.asarray(self.p_values, dtype=complex)
        q = np.asarray(self.q_values, dtype=complex)
        if x.ndim != 1 or x.size < 2 or p.shape != x.shape or q.shape != x.shape:
            raise ValueError("sampled potential needs matching 1-d arrays with at least two nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("sample nodes must be strictly increasing")
        if abs(x[0]) > 1e-9 or abs(x[-1] - np.pi) > 1e-9:
            raise ValueError(f"sample nodes must cover [0, pi], got [{x[0]}, {x[-1]}]")
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "p_values", p)
        object.__setattr__(self, "q_values", q)

    @property
    def is_zero(self):
        return not (np.any(self.p_values) or np.any(self.q_values))

    @staticmethod
    def _interp(x, xp, fp):
        return np.interp(x, xp, fp.real) + 1j * np.interp(x, xp, fp.imag)

    def evaluate(self, x):
        return self._interp(x, self.nodes, self.p_values), self._interp(x, self.nodes, self.q_values)

    def adjoint(self):
        return SampledPotential(self.nodes, np.conj(self.q_values), np.conj(self.p_values))

    def __eq__(self, other):
        return (
            isinstance(other, SampledPotential)
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.p_values, other.p_values)
            and np.array_equal(self.q_values, other.q_values)
        )

    __hash__ = None


def read_potential_csv(path) -> SampledPotential:
    """Load a sampled potential from CSV with header ``x,re_p,im_p,re_q,im_q``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["x", "re_p", "im_p", "re_q", "im_q"]:
            raise ValueError(f"{path}: expected header x,re_p,im_p,re_q,im_q, got {','.join(header)}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float)
    return SampledPotential(data[:, 0], data[:, 1] + 1j * data[:, 2], data[:, 3] + 1j * data[:, 4])


def adjoint_potential(V: Potential) -> Potential:
    """``V* = ((0, conj Q), (conj P, 0))``."""
    return V.adjoint()


# ---------------------------------------------------------------------------
# Volterra operators on the panel grid
# ---------------------------------------------------------------------------


class _Volterra:
    """``int_0^x exp(k (x - t)) g(t) dt`` and ``int_x^pi exp(k (x - t)) g(t) dt`` at the nodes.

    Panels are uniform, so one n-by-n panel matrix serves every panel and the
    panel-to-panel carry is a first-order linear recurrence.
    """

    def __init__(self, grid: Grid, kappa: complex):
        ref = grid.reference
        h = grid.panel_width
        hh = 0.5 * h
        s = hh * (ref.nodes + 1.0)  # node offsets from the panel's left edge
        diff = s[:, None] - s[None, :]
        ek = np.exp(kappa * diff)
        self.grid = grid
        self.fwd_local = hh * ref.integration * ek
        self.bwd_local = hh * (ref.weights[None, :] - ref.integration) * ek
        self.fwd_full = hh * ref.weights * np.exp(kappa * (h - s))
        self.bwd_full = hh * ref.weights * np.exp(-kappa * s)
        self.fwd_carry_in = np.exp(kappa * s)
        self.bwd_carry_in = np.exp(kappa * (s - h))
        self.step = np.exp(kappa * h)
        self.step_back = np.exp(-kappa * h)

    def forward(self, g):
        """Values at the nodes and at x = pi."""
        p = self.grid.panels(g)
        extra = p.shape[2:]
        local = np.einsum("ij,pj...->pi...", self.fwd_local, p)
        full = np.einsum("j,pj...->p...", self.fwd_full, p)
        at_right = lfilter([1.0], [1.0, -self.step], full, axis=0)
        at_left = np.concatenate([np.zeros((1,) + extra, complex), at_right[:-1]], axis=0)
        out = local + self.fwd_carry_in.reshape((1, -1) + (1,) * len(extra)) * at_left[:, None]
        return out.reshape(g.shape), at_right[-1]

    def backward(self, g):
        """Values at the nodes and at x = 0."""
        p = self.grid.panels(g)
        extra = p.shape[2:]
        local = np.einsum("ij,pj...->pi...", self.bwd_local, p)
        full = np.einsum("j,pj...->p...", self.bwd_full, p)
        at_left = lfilter([1.0], [1.0, -self.step_back], full[::-1], axis=0)[::-1]
        at_right = np.concatenate([at_left[1:], np.zeros((1,) + extra, complex)], axis=0)
        out = local + self.bwd_carry_in.reshape((1, -1) + (1,) * len(extra)) * at_right[:, None]
        return out.reshape(g.shape), at_left[0]


# ---------------------------------------------------------------------------
# fundamental matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PicardReport:
    iterations: int
    final_update_sup: float
    remainder_sup: float
    remainder_w11: float
    method: str = "picard"
    history: tuple = ()  # per column: sup-norm update of every Picard sweep

    @property
    def converged(self) -> bool:
        return math.isfinite(self.final_update_sup)


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """Fundamental matrix of system (direct) or its adjoint, in factored form.

    ``lam`` is the spectral parameter of the direct problem; ``param`` is the one
    actually used in the equation (``conj(lam)`` for the adjoint system).
    ``b`` has shape (2, 2, N); ``b_left`` / ``b_right`` are the exact remainder
    matrices at x = 0 and x = pi.
    """

    lam: SpectralParameter
    param: SpectralParameter
    system: str
    grid: Grid
    b: np.ndarray
    b_left: np.ndarray
    b_right: np.ndarray

    @property
    def mu(self) -> complex:
        return self.param.lam

    def dephased(self) -> np.ndarray:
        """``I + b`` with shape (2, 2, N)."""
        return np.eye(2)[:, :, None] + self.b

    def phase_exponents(self, x):
        """Complex exponents ``(+i mu x, -i mu x)`` of the two column factors."""
        x = np.asarray(x, dtype=float)
        return 1j * self.mu * x, -1j * self.mu * x

    def column(self, k: int) -> GridFunction2:
        """Column ``k`` (1 or 2) as linear values; overflows for huge ``|Im lambda|``."""
        e1, e2 = self.phase_exponents(self.grid.nodes)
        phase = np.exp(e1 if k == 1 else e2)
        d = self.dephased()
        return GridFunction2(d[0, k - 1] * phase, d[1, k - 1] * phase, self.grid)

    def matrix_at_nodes(self) -> np.ndarray:
        e1, e2 = self.phase_exponents(self.grid.nodes)
        return self.dephased() * np.stack([np.exp(e1), np.exp(e2)])[None, :, :]

    def dephased_det(self) -> np.ndarray:
        d = self.dephased()
        return d[0, 0] * d[1, 1] - d[0, 1] * d[1, 0]

    def endpoint_dephased(self):
        eye = np.eye(2)
        return eye + self.b_left, eye + self.b_right


class _Column:
    """Coupled pair ``off = s_off*K[off_src*(1 + diag)]``, ``diag = s_diag*F[diag_src*off]``."""

    def __init__(self, off_op, diag_op, off_src, diag_src, sign_off, sign_diag):
        self.off_op, self.diag_op = off_op, diag_op
        self.off_src, self.diag_src = off_src, diag_src
        self.sign_off, self.sign_diag = sign_off, sign_diag

    def off_of(self, g):
        out, edge = self.off_op(_bcast(self.off_src, g) * g)
        return self.sign_off * out, self.sign_off * edge

    def diag_of(self, off):
        out, edge = self.diag_op(_bcast(self.diag_src, off) * off)
        return self.sign_diag * out, self.sign_diag * edge

    def sweep(self, diag):
        off, off_edge = self.off_of(1.0 + diag)
        diag_new, diag_edge = self.diag_of(off)
        return off, off_edge, diag_new, diag_edge

    def dense_solve(self, n):
        """Solve ``(I - L) off = c`` for the discretized linear map directly."""
        c = self.off_of(np.ones(n, complex))[0]
        lin = np.empty((n, n), complex)
        block = 256
        for start in range(0, n, block):
            cols = np.eye(n, dtype=complex)[:, start : start + block]
            lin[:, start : start + block] = self.off_of(self.diag_of(cols)[0])[0]
        off = np.linalg.solve(np.eye(n) - lin, c)
        diag = self.diag_of(off)[0]
        off2, off_edge, diag2, diag_edge = self.sweep(diag)
        update = float(max(np.max(np.abs(off2 - off)), np.max(np.abs(diag2 - diag))))
        return off2, off_edge, diag2, diag_edge, update


def _bcast(src, like):
    return src.reshape(src.shape + (1,) * (np.ndim(like) - 1))


def _solve_column(column, n, tol, max_iter, direct_fallback, label):
    diag = np.zeros(n, complex)
    off = np.zeros(n, complex)
    update = math.inf
    it = 0
    history = []
    while it < max_iter:
        it += 1
        off_new, off_edge, diag_new, diag_edge = column.sweep(diag)
        update = float(max(np.max(np.abs(off_new - off)), np.max(np.abs(diag_new - diag))))
        history.append(update)
        off, diag = off_new, diag_new
        if update < tol:
            return off, off_edge, diag, diag_edge, it, update, "picard", tuple(history)
        if not math.isfinite(update) or update > 1e8:
            break
    if direct_fallback and n <= DIRECT_MAX_NODES:
        off, off_edge, diag, diag_edge, update = column.dense_solve(n)
        return off, off_edge, diag, diag_edge, it, update, "direct", tuple(history)
    raise PicardDivergenceError(
        f"Picard iteration for {label} did not converge in {it} iterations (last update {update:.3e})",
        update,
    )


#: propagation fallback is used only while exp(pi*|Im mu|) stays below exp(PROPAGATE_MAX_GROWTH)
PROPAGATE_MAX_GROWTH = 5.0


def _propagate(grid: Grid, P, Q, mu: complex, upper: bool):
    """Remainders from an initial-value propagation of the full matrix.

    Each panel is solved by spectral integral collocation.  Cheap and accurate
    when ``|mu|`` is small, but the decaying column loses relative accuracy like
    ``exp(2 pi |Im mu|)``, hence the growth cap.
    """
    ref = grid.reference
    n = ref.nodes.size
    hh = 0.5 * grid.panel_width
    M = np.empty((grid.size, 2, 2), complex)
    M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1] = 1j * mu, -1j * P, 1j * Q, -1j * mu
    Mp = grid.panels(M)
    eye = np.eye(2 * n)
    phi = np.empty((grid.size, 2, 2), complex)
    start = np.eye(2, dtype=complex)
    for p in range(grid.panel_count):
        # rows (i, r), cols (j, c): delta - hh * S_ij * M_j[r, c]
        blocks = hh * ref.integration[:, None, :, None] * Mp[p].transpose(1, 0, 2)[None, :, :, :]
        A = eye - blocks.reshape(2 * n, 2 * n)
        U = np.linalg.solve(A, np.tile(start, (n, 1))).reshape(n, 2, 2)
        phi[p * n : (p + 1) * n] = U
        start = start + hh * np.einsum("j,jrc,jcs->rs", ref.weights, Mp[p], U)
    end = start
    C = np.eye(2, dtype=complex)
    if upper:
        C[1, 0] = -end[1, 0] / end[1, 1]
    else:
        C[0, 1] = -end[0, 1] / end[0, 0]
    x = grid.nodes
    dephase = np.stack([np.exp(-1j * mu * x), np.exp(1j * mu * x)], axis=-1)  # (N, 2) per column
    Y = phi @ C
    b = (Y * dephase[:, None, :] - np.eye(2)).transpose(1, 2, 0)
    b_left = C - np.eye(2)
    b_right = end @ C * np.array([np.exp(-1j * mu * np.pi), np.exp(1j * mu * np.pi)])[None, :] - np.eye(2)
    if upper:
        b_right[1, 0] = 0.0
    else:
        b_right[0, 1] = 0.0
    return b, b_left, b_right


def solve_fundamental(
    V: Potential,
    lam,
    system: str = DIRECT,
    grid: Grid | None = None,
    tol: float = PICARD_TOL,
    max_iter: int = PICARD_MAX_ITER,
    direct_fallback: bool = False,
):
    """Construct the factored fundamental matrix and a convergence report.

    For ``system="adjoint"`` the potential is replaced by its adjoint and the
    parameter by its conjugate in the mirrored half-plane.  With
    ``direct_fallback`` a non-contracting iteration is replaced by a dense
    solve of the same discretized equations instead of raising.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lam = SpectralParameter.of(lam)
    if system == DIRECT:
        param, pot = lam, V
    elif system == ADJOINT:
        param, pot = lam.conjugate(), adjoint_potential(V)
    else:
        raise ValueError(f"unknown system {system!r}")
    grid = grid or Grid.for_lambda(lam.lam)
    n = grid.size
    zero_edge = np.zeros((2, 2), complex)

    if pot.is_zero:
        b = np.zeros((2, 2, n), complex)
        fm = FundamentalMatrix(lam, param, system, grid, b, zero_edge, zero_edge.copy())
        return fm, PicardReport(0, 0.0, 0.0, 0.0)

    mu = param.lam
    P, Q = pot.sample(grid)
    plain = _Volterra(grid, 0.0)
    k1 = _Volterra(grid, -2j * mu)  # kernel of b21
    k2 = _Volterra(grid, 2j * mu)  # kernel of b12
    upper = param.half_plane == UPPER

    # column 1: off = b21, diag = b11 ; column 2: off = b12, diag = b22
    if upper:
        col1 = _Column(k1.backward, plain.forward, 1j * Q, P, -1.0, -1j)
        col2 = _Column(k2.forward, plain.forward, -1j * P, Q, 1.0, 1j)
    else:
        col1 = _Column(k1.forward, plain.forward, 1j * Q, P, 1.0, -1j)
        col2 = _Column(k2.backward, plain.forward, -1j * P, Q, -1.0, 1j)

    try:
        off1, edge21, diag1, edge11, it1, up1, m1, h1 = _solve_column(col1, n, tol, max_iter, False, "column 1")
        off2, edge12, diag2, edge22, it2, up2, m2, h2 = _solve_column(col2, n, tol, max_iter, False, "column 2")
    except PicardDivergenceError as exc:
        if not direct_fallback:
            raise
        if math.pi * abs(mu.imag) <= PROPAGATE_MAX_GROWTH:
            b, b_left, b_right = _propagate(grid, P, Q, mu, upper)
            fm = FundamentalMatrix(lam, param, system, grid, b, b_left, b_right)
            report = PicardReport(
                iterations=max_iter,
                final_update_sup=float(exc.last_update),
                remainder_sup=float(np.max(np.abs(b))),
                remainder_w11=remainder_w11(fm),
                method="propagate",
            )
            return fm, report
        off1, edge21, diag1, edge11, it1, up1, m1, h1 = _solve_column(col1, n, tol, max_iter, True, "column 1")
        off2, edge12, diag2, edge22, it2, up2, m2, h2 = _solve_column(col2, n, tol, max_iter, True, "column 2")

    b = np.empty((2, 2, n), complex)
    b[0, 0], b[1, 0], b[0, 1], b[1, 1] = diag1, off1, off2, diag2
    b_left = np.zeros((2, 2), complex)
    b_right = np.zeros((2, 2), complex)
    # diagonal remainders are forward integrals: zero at 0, edge value at pi
    b_right[0, 0], b_right[1, 1] = edge11, edge22
    if upper:
        b_left[1, 0] = edge21
        b_right[0, 1] = edge12
    else:
        b_right[1, 0] = edge21
        b_left[0, 1] = edge12

    fm = FundamentalMatrix(lam, param, system, grid, b, b_left, b_right)
    report = PicardReport(
        iterations=max(it1, it2),
        final_update_sup=max(up1, up2),
        remainder_sup=float(np.max(np.abs(b))),
        remainder_w11=remainder_w11(fm),
        method="direct" if "direct" in (m1, m2) else "picard",
        history=(h1, h2),
    )
    return fm, report


def solve_many(V, lams, system=DIRECT, grid=None, tol=PICARD_TOL, threads=1, **kwargs):
    """Solve at several parameters; results come back in input order."""

    def one(lam):
        return solve_fundamental(V, lam, system, grid, tol, **kwargs)

    if threads <= 1:
        return [one(lam) for lam in lams]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, lams))


def remainder_w11(fm: FundamentalMatrix) -> float:
    """Largest ``||b_jk||_{L1} + ||b_jk'||_{L1}`` over the four remainders."""
    g = fm.grid
    best = 0.0
    for j in range(2):
        for k in range(2):
            bjk = fm.b[j, k]
            val = g.integrate(np.abs(bjk)) + g.integrate(np.abs(g.derivative(bjk)))
            best = max(best, float(np.real(val)))
    return best


# ---------------------------------------------------------------------------
# oracles and residuals
# ---------------------------------------------------------------------------


def oracle_constant(p, q, lam, x, rebase: str | None = None) -> np.ndarray:
    """Closed-form propagator ``exp(M x)`` of ``y' = M y`` for constant ``P = p``, ``Q = q``.

    ``M = ((i lam, -i p), (i q, -i lam))`` satisfies ``M^2 = -mu^2 I`` with
    ``mu^2 = lam^2 - p q``.  With ``rebase`` set to ``"upper"`` or ``"lower"``
    the columns are recombined to obey the solver's anchor conditions.
    Returns an array of shape ``x.shape + (2, 2)``.
    """
    lam = complex(lam)
    m = np.array([[1j * lam, -1j * p], [1j * q, -1j * lam]], dtype=complex)
    mu = np.sqrt(complex(lam * lam - p * q))

    def prop(xv):
        xv = np.asarray(xv, dtype=float)
        cos = np.cos(mu * xv)
        sinc = xv * np.sinc(mu * xv / np.pi)  # sin(mu x)/mu, equal to x at mu = 0
        return cos[..., None, None] * np.eye(2) + sinc[..., None, None] * m

    phi = prop(x)
    if rebase is None:
        return phi
    end = prop(np.pi)
    if rebase == UPPER:
        c = np.array([[1, 0], [-end[1, 0] / end[1, 1], 1]], dtype=complex)
    elif rebase == LOWER:
        c = np.array([[1, -end[0, 1] / end[0, 0]], [0, 1]], dtype=complex)
    else:
        raise ValueError(f"rebase must be None, {UPPER!r} or {LOWER!r}")
    return phi @ c


def oracle_constant_dephased(p, q, lam, x, half_plane=UPPER) -> np.ndarray:
    """Remainders ``b(x)`` (shape ``x.shape + (2, 2)``) of the anchored constant-coefficient solution.

    Built from the eigen-solutions ``exp(+-i mu x) v_pm`` of ``M``, each shifted
    to the endpoint where it is largest, so no decaying column is formed from
    growing ones.  Agrees with ``oracle_constant(..., rebase=half_plane)``
    wherever the latter is accurate.
    """
    lam = complex(lam)
    x = np.asarray(x, dtype=float)
    mu = np.sqrt(complex(lam * lam - p * q))
    if (mu * lam.conjugate()).real < 0:
        mu = -mu
    v_plus = np.array([lam + mu, q], dtype=complex)
    v_minus = np.array([p, lam + mu], dtype=complex)
    x_plus = 0.0 if mu.imag >= 0 else np.pi
    x_minus = np.pi if mu.imag >= 0 else 0.0

    def basis(xv):
        return np.exp(1j * mu * (xv - x_plus)), np.exp(-1j * mu * (xv - x_minus))

    def anchored(conditions):
        # conditions: ((component, endpoint, value), (component, endpoint, value))
        a = np.empty((2, 2), complex)
        rhs = np.empty(2, complex)
        for row, (comp, end, value) in enumerate(conditions):
            ep, em = basis(end)
            a[row] = [ep * v_plus[comp], em * v_minus[comp]]
            rhs[row] = value
        return np.linalg.solve(a, rhs)

    if half_plane == UPPER:
        cond1 = ((0, 0.0, 1.0), (1, np.pi, 0.0))
        cond2 = ((0, 0.0, 0.0), (1, 0.0, 1.0))
    elif half_plane == LOWER:
        cond1 = ((0, 0.0, 1.0), (1, 0.0, 0.0))
        cond2 = ((0, np.pi, 0.0), (1, 0.0, 1.0))
    else:
        raise ValueError(f"half_plane must be {UPPER!r} or {LOWER!r}")
    ep, em = basis(x)
    out = np.empty(x.shape + (2, 2), complex)
    for k, (cond, sign) in enumerate(((cond1, -1j), (cond2, 1j))):
        c_plus, c_minus = anchored(cond)
        undo = np.exp(sign * lam * x)
        for j in range(2):
            col = c_plus * ep * v_plus[j] + c_minus * em * v_minus[j]
            out[..., j, k] = col * undo - (1.0 if j == k else 0.0)
    return out


def apply_operator(f: GridFunction2, V: Potential, lam) -> GridFunction2:
    """``B f' + V f - lam f`` with panel-wise spectral derivatives."""
    g = f.grid
    P, Q = V.sample(g)
    d1 = g.derivative(f.component1)
    d2 = g.derivative(f.component2)
    return GridFunction2(
        -1j * d1 + P * f.component2 - lam * f.component1,
        1j * d2 + Q * f.component1 - lam * f.component2,
        g,
    )


def ode_residual(f: GridFunction2, V: Potential, lam) -> float:
    """Sup of ``|B f' + V f - lam f|`` over the nodes, relative to ``sup |f|``."""
    scale = f.sup()
    if scale == 0.0:
        return 0.0
    r = apply_operator(f, V, complex(lam))
    return r.sup() / scale


def remainder_decay_scan(V: Potential, sigmas, tau: float, tol: float = PICARD_TOL, threads: int = 1):
    """Rows ``(|lambda|, remainder_sup, remainder_w11)`` along ``lambda = sigma + i tau``, sorted by ``|lambda|``."""
    sigmas = list(sigmas)
    if len(sigmas) < 2:
        raise ValueError("a decay scan needs at least two points")
    lams = [complex(s, tau) for s in sigmas]
    results = solve_many(V, lams, tol=tol, threads=threads)
    rows = [(abs(l), rep.remainder_sup, rep.remainder_w11) for l, (_, rep) in zip(lams, results)]
    return sorted(rows, key=lambda r: r[0])
