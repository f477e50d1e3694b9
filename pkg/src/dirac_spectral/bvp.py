"""Two-point boundary eigenvalue problems for the Dirac system.

Boundary forms act on ``(y1(0), y2(0), y1(pi), y2(pi))``.  The characteristic
determinant is assembled from the factored fundamental matrix, with each
column of the boundary matrix divided by its largest entry (found in log form,
so neither endpoint's contribution can overflow or underflow on its own); the
returned mantissa is the determinant of that rescaled matrix and the scale is
kept separately as a logarithm.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dirac_solver import DIRECT, PICARD_TOL, FundamentalMatrix, Potential, adjoint_potential, solve_fundamental
from .errors import ContourError, DegenerateEigenvalueError, PairingError
from .function_space import Grid, GridFunction2, ScaledComplex, SpectralParameter, h_norm, inner_product

RANK_TOL = 1e-10
NUDGE_RATIO = 1e-6
MAX_NUDGES = 5
WINDING_SLACK = 0.2

# Lagrange identity: <L y, z> - <y, L* z> = conj(Z)^T diag(J) Y over boundary vectors
_LAGRANGE = np.array([1j, -1j, -1j, 1j])


@dataclass(frozen=True, eq=False)
class BoundaryConditions:
    """Rows ``U1, U2`` of a 2x4 coefficient matrix acting on ``(y1(0), y2(0), y1(pi), y2(pi))``."""

    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=complex)
        if a.shape != (2, 4):
            raise ValueError(f"boundary matrix must be 2x4, got {a.shape}")
        s = np.linalg.svd(a, compute_uv=False)
        if s[0] == 0 or s[1] <= RANK_TOL * s[0]:
            raise ValueError("boundary matrix must have rank 2")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    def same_conditions(self, other: "BoundaryConditions", tol: float = 1e-10) -> bool:
        """True when both matrices have the same row space."""
        s = np.linalg.svd(np.vstack([self.a, other.a]), compute_uv=False)
        return bool(s[2] <= tol * s[0])

    def canonical(self) -> "BoundaryConditions":
        return BoundaryConditions(_rref(self.a))


def _rref(a, tol=1e-12):
    m = np.array(a, dtype=complex)
    rows, cols = m.shape
    r = 0
    for c in range(cols):
        if r == rows:
            break
        piv = r + int(np.argmax(np.abs(m[r:, c])))
        if abs(m[piv, c]) <= tol * max(1.0, np.abs(m).max()):
            continue
        m[[r, piv]] = m[[piv, r]]
        m[r] /= m[r, c]
        for k in range(rows):
            if k != r:
                m[k] -= m[k, c] * m[r]
        r += 1
    m[np.abs(m) < tol] = 0
    return m


def boundary_form(bc: BoundaryConditions, f: GridFunction2) -> np.ndarray:
    """``(U1(f), U2(f))`` using endpoint values extrapolated from the grid."""
    return bc.a @ f.endpoints()


def adjoint_bc(bc: BoundaryConditions) -> BoundaryConditions:
    """Conditions annihilating the Lagrange boundary term against every admissible ``y``."""
    m = np.conj(bc.a) * _LAGRANGE[None, :]
    _, _, vh = np.linalg.svd(m)
    return BoundaryConditions(np.conj(vh[2:])).canonical()


def lagrange_boundary_term(y: GridFunction2, z: GridFunction2) -> complex:
    """``[-i y1 conj(z1) + i y2 conj(z2)]`` evaluated from 0 to pi."""
    return complex(np.dot(np.conj(z.endpoints()) * _LAGRANGE, y.endpoints()))


# ---------------------------------------------------------------------------
# characteristic determinant
# ---------------------------------------------------------------------------


def boundary_matrix(bc: BoundaryConditions, fm: FundamentalMatrix):
    """Rescaled matrix ``U_i(Y[k]) / s_k`` and the log scales ``log s_k``.

    ``s_k`` is the larger of the sup-norms of the two endpoint contributions
    to column ``k``; an identically vanishing column gets ``s_k = 1``.
    """
    mu = fm.param.lam
    d0, dpi = fm.endpoint_dephased()
    exps = (1j * mu * np.pi, -1j * mu * np.pi)
    log_s = np.zeros(2)
    mat = np.empty((2, 2), complex)
    for k in range(2):
        at0 = bc.a[:, :2] @ d0[:, k]
        atpi = bc.a[:, 2:] @ dpi[:, k]
        big0, bigpi = np.max(np.abs(at0)), np.max(np.abs(atpi))
        log0 = math.log(big0) if big0 > 0 else -math.inf
        logpi = math.log(bigpi) + exps[k].real if bigpi > 0 else -math.inf
        top = max(log0, logpi)
        log_s[k] = top if math.isfinite(top) else 0.0
        # the smaller endpoint may underflow here; it is negligible next to the larger one
        mat[:, k] = at0 * math.exp(min(0.0, log0 - log_s[k])) / (big0 or 1.0)
        if bigpi > 0:
            mat[:, k] += atpi * np.exp(exps[k] - log_s[k])
    return mat, log_s


def char_det(
    bc: BoundaryConditions,
    V: Potential,
    lam,
    grid: Grid | None = None,
    tol: float = PICARD_TOL,
    half_plane: str | None = None,
) -> ScaledComplex:
    """Characteristic determinant ``det[U_i(Y[k])]`` as mantissa times ``exp(log_scale)``.

    The mantissa is the determinant after dividing each column by its largest
    entry; it is O(1), not unimodular, and vanishes exactly at the eigenvalues.  ``half_plane`` forces the representation used
    (the value does not depend on it inside the overlap strip).
    """
    lam = SpectralParameter.of(lam, half_plane)
    fm, _ = solve_fundamental(V, lam, DIRECT, grid, tol, direct_fallback=True)
    mat, log_s = boundary_matrix(bc, fm)
    return ScaledComplex(complex(np.linalg.det(mat)), float(log_s.sum()))


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EigenRecord:
    lambda_n: complex
    multiplicity: int = 1
    y_n: GridFunction2 | None = None
    z_n: GridFunction2 | None = None
    biorthogonal: bool = False
    pairing_value: complex | None = None
    cell: tuple | None = None
    residual: float | None = None
    flags: tuple = ()


@dataclass(frozen=True)
class SpectrumReport:
    records: tuple
    region: tuple
    winding_total: int
    max_im: float
    nudges: int = 0

    def eigenvalues(self) -> np.ndarray:
        return np.array([r.lambda_n for r in self.records])


def enumeration_key(lam: complex):
    return (round(abs(lam.real), 12), round(lam.imag, 12), round(lam.real, 12))


def order_records(records):
    """Deterministic enumeration: by ``|Re lambda|``, then ``Im lambda``, then ``Re lambda``."""
    return tuple(sorted(records, key=lambda r: enumeration_key(r.lambda_n)))


# ---------------------------------------------------------------------------
# argument principle
# ---------------------------------------------------------------------------


class _DeltaCache:
    def __init__(self, bc, V, grid, tol):
        self.bc, self.V, self.grid, self.tol = bc, V, grid, tol
        self.values = {}
        self.edges = {}

    def __call__(self, lam: complex) -> ScaledComplex:
        lam = complex(lam)
        hit = self.values.get(lam)
        if hit is None:
            hit = char_det(self.bc, self.V, lam, self.grid, self.tol)
            self.values[lam] = hit
        return hit


def _wrap(d):
    return (d + math.pi) % (2 * math.pi) - math.pi


def _chord_ok(va, vm, vb):
    """Midpoint close to the chord, so the image of the segment cannot loop around 0."""
    top = max(va.log_scale, vm.log_scale, vb.log_scale)
    a, m, b = (v.mantissa * math.exp(v.log_scale - top) for v in (va, vm, vb))
    return abs(m - 0.5 * (a + b)) < 0.25 * min(abs(a), abs(b))


def _edge(delta, a, b, per_edge, max_depth):
    """Phase change of ``delta`` along the segment a -> b and the moduli sampled on it.

    Segments are sampled in a canonical direction so that neighbouring cells
    reuse each other's evaluations.
    """
    key = (a, b) if (a.real, a.imag) <= (b.real, b.imag) else (b, a)
    hit = delta.edges.get(key)
    if hit is None:
        lo, hi = key
        pts = [lo + (hi - lo) * (k / per_edge) for k in range(per_edge + 1)]
        vals = [delta(p) for p in pts]
        log_abs = [v.log_abs for v in vals]
        total = 0.0
        for i in range(per_edge):
            stack = [(pts[i], vals[i], pts[i + 1], vals[i + 1], 0)]
            while stack:
                p, vp, q, vq, depth = stack.pop()
                if vp.mantissa == 0 or vq.mantissa == 0:
                    step = math.pi
                else:
                    step = _wrap(vq.phase - vp.phase)
                m = 0.5 * (p + q)
                vm = delta(m)
                if depth >= max_depth or (abs(step) < math.pi / 2 and _chord_ok(vp, vm, vq)):
                    total += step
                    continue
                log_abs.append(vm.log_abs)
                stack.append((m, vm, q, vq, depth + 1))
                stack.append((p, vp, m, vm, depth + 1))
        hit = (total, log_abs)
        delta.edges[key] = hit
    total, log_abs = hit
    return (total if key[0] == a else -total), log_abs


def _winding(delta, rect, per_edge=4, max_depth=40):
    """Winding number of ``delta`` around ``rect`` and the smallest relative log-modulus seen."""
    x0, x1, y0, y1 = rect
    corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
    total = 0.0
    log_abs = []
    for a, b in zip(corners, corners[1:] + corners[:1]):
        step, la = _edge(delta, a, b, per_edge, max_depth)
        total += step
        log_abs.extend(la)
    turns = total / (2 * math.pi)
    log_abs = np.asarray(log_abs)
    finite = log_abs[np.isfinite(log_abs)]
    rel_min = -math.inf if finite.size < log_abs.size else float(finite.min() - np.median(finite))
    return turns, rel_min


def _count(delta, rect):
    """Integer winding count, or ``None`` if the contour passes too close to a zero."""
    turns, rel_min = _winding(delta, rect)
    if rel_min < math.log(NUDGE_RATIO):
        return None
    k = round(turns)
    if abs(turns - k) > WINDING_SLACK:
        raise ContourError(f"non-integer winding {turns:.3f} on {rect}; refine the grid or the contour")
    return k


def _dilate(rect, factor):
    x0, x1, y0, y1 = rect
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    hx, hy = 0.5 * (x1 - x0) * factor, 0.5 * (y1 - y0) * factor
    return (cx - hx, cx + hx, cy - hy, cy + hy)


def _inside(lam, rect, slack=0.0):
    x0, x1, y0, y1 = rect
    return x0 - slack <= lam.real <= x1 + slack and y0 - slack <= lam.imag <= y1 + slack


# split points avoid the exact midpoint, where symmetric spectra tend to sit
_SPLIT_FRACTIONS = (0.5 + 0.0731, 0.5 - 0.0617, 0.5 + 0.1379, 0.5 - 0.1553)


def _children(rect, attempt):
    x0, x1, y0, y1 = rect
    f = _SPLIT_FRACTIONS[attempt % len(_SPLIT_FRACTIONS)]
    xm = x0 + f * (x1 - x0)
    ym = y0 + f * (y1 - y0)
    return [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)]


def _secant(delta, start, m, tol, radius, max_iter=80):
    """Multiplicity-aware secant iteration on ``delta`` rescaled by a fixed constant."""
    ref = delta(start).log_scale

    def f(lam):
        v = delta(lam)
        return v.mantissa * math.exp(v.log_scale - ref)

    h = 1e-2 * radius
    x0, x1 = start, start + h
    f0, f1 = f(x0), f(x1)
    for _ in range(max_iter):
        if f1 == f0:
            break
        x2 = x1 - m * f1 * (x1 - x0) / (f1 - f0)
        if not abs(x2 - start) <= radius:
            return None
        x0, f0 = x1, f1
        x1, f1 = x2, f(x2)
        if abs(x1 - x0) <= 1e-15 * max(1.0, abs(x1)) or f1 == 0:
            break
    return x1


def _subdivide(delta, todo, found, tol, min_cell, corner, pool):
    while todo:
        cell, m = todo.pop()
        if m == 0:
            continue
        size = max(cell[1] - cell[0], cell[3] - cell[2])
        if m == 1 or size <= min_cell:
            centre = complex(0.5 * (cell[0] + cell[1]), 0.5 * (cell[2] + cell[3]))
            lam = _secant(delta, centre, m, tol, 2.0 * size)
            if size <= min_cell and (lam is None or not _inside(lam, cell, slack=size)):
                lam = centre
            if lam is not None and (_inside(lam, cell, slack=1e-9 * max(1.0, corner)) or size <= min_cell):
                found.append((lam, m, cell))
                continue
        for attempt in range(len(_SPLIT_FRACTIONS)):
            kids = _children(cell, attempt)
            counts = list(pool.map(lambda k: _count(delta, k), kids)) if pool else [_count(delta, k) for k in kids]
            if None not in counts and sum(counts) == m:
                todo.extend(zip(kids, counts))
                break
        else:
            raise ContourError(f"could not split {cell} consistently (winding {m})")


def find_eigenvalues(
    bc: BoundaryConditions,
    V: Potential,
    region,
    tol: float = 1e-10,
    grid: Grid | None = None,
    min_cell: float | None = None,
    functions: bool = True,
    picard_tol: float = PICARD_TOL,
    threads: int = 1,
) -> SpectrumReport:
    """Zeros of the characteristic determinant inside ``region = (re0, re1, im0, im1)``.

    The region is quadrisected until each cell holds a single zero (counted
    with multiplicity by the argument principle) or reaches ``min_cell``;
    each zero is then polished by a secant iteration.
    """
    region = tuple(float(v) for v in region)
    x0, x1, y0, y1 = region
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"empty region {region}")
    corner = max(abs(complex(x, y)) for x in (x0, x1) for y in (y0, y1))
    grid = grid or Grid.for_lambda(complex(max(abs(x0), abs(x1)), max(abs(y0), abs(y1))))
    min_cell = min_cell or 1e-4 * max(x1 - x0, y1 - y0)
    delta = _DeltaCache(bc, V, grid, picard_tol)

    nudges = 0
    rect = region
    total = _count(delta, rect)
    while total is None:
        nudges += 1
        if nudges > MAX_NUDGES:
            raise ContourError(f"contour of {region} passes through a zero of the determinant")
        rect = _dilate(region, 1.0 + 0.01 * nudges)
        total = _count(delta, rect)

    found = []
    todo = [(rect, total)]
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        _subdivide(delta, todo, found, tol, min_cell, corner, pool)
    finally:
        if pool:
            pool.shutdown()

    records = []
    for lam, m, cell in found:
        v = delta(lam)
        residual = abs(v.mantissa)
        flags = (("multiple",) if m > 1 else ()) + (("unconverged",) if not residual < tol else ())
        y = None
        if functions and m == 1:
            y = eigenfunction(bc, V, lam, grid)
        records.append(EigenRecord(lam, m, y, cell=cell, residual=residual, flags=flags))
    records = order_records(records)
    max_im = max((abs(r.lambda_n.imag) for r in records), default=0.0)
    return SpectrumReport(records, rect, int(total), max_im, nudges)


# ---------------------------------------------------------------------------
# eigenfunctions and biorthogonal pairs
# ---------------------------------------------------------------------------


def eigen_coefficients(bc: BoundaryConditions, fm: FundamentalMatrix):
    """Unit null vector ``(C1, C2)`` of the boundary matrix; largest entry real positive."""
    mat, log_s = boundary_matrix(bc, fm)
    _, s, vh = np.linalg.svd(mat)
    scale = np.linalg.norm(bc.a, 2)
    if s[0] <= 1e-6 * scale:
        raise DegenerateEigenvalueError(
            f"boundary matrix vanishes at lambda = {fm.lam.lam}: eigenvalue of geometric multiplicity 2"
        )
    c = np.conj(vh[-1]) * np.exp(-(log_s - log_s.max()))
    c = c / np.linalg.norm(c)
    k = int(np.argmax(np.abs(c)))
    c = c * (abs(c[k]) / c[k])
    return c, s


def eigenfunction(
    bc: BoundaryConditions,
    V: Potential,
    lambda_n,
    grid: Grid | None = None,
    normalize: bool = True,
    multiplicity: int = 1,
    tol: float = PICARD_TOL,
) -> GridFunction2:
    """Eigenfunction ``C1 Y[1] + C2 Y[2]`` at a simple eigenvalue.

    With ``normalize`` the result has unit norm; otherwise ``(C1, C2)`` is a
    unit vector whose largest entry is real and positive.
    """
    if multiplicity > 1:
        raise DegenerateEigenvalueError(f"eigenvalue {lambda_n} has multiplicity {multiplicity}")
    lam = SpectralParameter.of(lambda_n)
    fm, _ = solve_fundamental(V, lam, DIRECT, grid, tol, direct_fallback=True)
    c, _ = eigen_coefficients(bc, fm)
    y = fm.column(1) * c[0] + fm.column(2) * c[1]
    if normalize:
        y = y / h_norm(y).value
    return y


def biorthogonal_pair(
    y_n: GridFunction2, bc: BoundaryConditions, V: Potential, lambda_n, tol: float = PICARD_TOL
) -> EigenRecord:
    """Adjoint eigenfunction at ``conj(lambda_n)`` rescaled so that ``<y_n, z_n> = 1``."""
    z = eigenfunction(adjoint_bc(bc), adjoint_potential(V), np.conj(complex(lambda_n)), y_n.grid, False, tol=tol)
    pairing = inner_product(y_n, z)
    if abs(pairing) < 1e-10 * h_norm(y_n).value * h_norm(z).value:
        raise PairingError(f"<y_n, z_n> nearly vanishes at lambda = {lambda_n}; associated functions likely")
    return EigenRecord(
        complex(lambda_n), 1, y_n, z / np.conj(pairing), biorthogonal=True, pairing_value=complex(pairing)
    )


def biorthogonal_system(report: SpectrumReport, bc: BoundaryConditions, V: Potential):
    """Biorthogonal records for the simple eigenvalues of a report; multiple ones stay flagged."""
    out = []
    for rec in report.records:
        if rec.multiplicity > 1 or rec.y_n is None:
            out.append(rec)
            continue
        pair = biorthogonal_pair(rec.y_n, bc, V, rec.lambda_n)
        out.append(replace(pair, cell=rec.cell, residual=rec.residual, flags=rec.flags))
    return tuple(out)


def maximal_operator(f: GridFunction2, V: Potential) -> GridFunction2:
    """``B f' + V f`` with panel-wise spectral derivatives."""
    from .dirac_solver import apply_operator

    return apply_operator(f, V, 0.0)


def adjoint_operator(f: GridFunction2, V: Potential) -> GridFunction2:
    return maximal_operator(f, adjoint_potential(V))
