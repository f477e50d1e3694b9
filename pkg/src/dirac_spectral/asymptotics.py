"""Measurable counterparts of the large-|Im lambda| estimates for fundamental solutions.

All norms and inner products are evaluated from the de-phased remainders with
the exponential factors handled in log form, so the diagnostics remain finite
for any ``|Im lambda|``.

Two reading notes on the estimates being audited: the combined bound sums
over the full index range ``j, k = 1, 2``, and the diagonal product of the
second columns pairs ``b_{-,12}`` with the adjoint-side remainder.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dirac_solver import ADJOINT, DIRECT, PICARD_TOL, FundamentalMatrix, Potential, solve_fundamental
from .errors import NonNormalizableError, PairingError
from .function_space import (
    Grid,
    LogMagnitude,
    ScaledComplex,
    SpectralParameter,
    inner_product,
    logsumexp_weighted,
)

AUDIT_SAMPLES = 100
AUDIT_SEED = 42
AUDIT_THRESHOLD = 2.0


@dataclass(frozen=True)
class CombinationCoefficients:
    C1: complex
    C2: complex
    C1t: complex
    C2t: complex

    def __post_init__(self):
        for name in ("C1", "C2", "C1t", "C2t"):
            object.__setattr__(self, name, complex(getattr(self, name)))
        if self.C1 == self.C2 == self.C1t == self.C2t == 0:
            raise ValueError("combination coefficients must not all vanish")

    @property
    def direct(self):
        return np.array([self.C1, self.C2])

    @property
    def adjoint(self):
        return np.array([self.C1t, self.C2t])


@dataclass(frozen=True)
class SandwichReport:
    """Measured values divided by their claimed envelope, over a list of parameters."""

    quantity: str
    lower_ratio: float
    upper_ratio: float
    lambdas: tuple
    ratios: tuple = field(default=())

    @property
    def band(self) -> float:
        return self.upper_ratio / self.lower_ratio


@dataclass(frozen=True)
class ColumnNorms:
    y11: LogMagnitude
    y22: LogMagnitude
    y21: LogMagnitude
    y12: LogMagnitude
    column1: LogMagnitude
    column2: LogMagnitude


def _log_phase_real(fm: FundamentalMatrix):
    """Real parts of the column exponents at the nodes, shape (2, N)."""
    e1, e2 = fm.phase_exponents(fm.grid.nodes)
    return np.stack([e1.real, e2.real])


def _log_abs(values):
    with np.errstate(divide="ignore"):
        return np.log(np.abs(values))


def column_norms(fm: FundamentalMatrix) -> ColumnNorms:
    """L2 norms of the four entries and the two columns, in log form."""
    w = fm.grid.weights
    d = fm.dephased()
    re = _log_phase_real(fm)
    entry = np.empty((2, 2))
    for j in range(2):
        for k in range(2):
            entry[j, k] = 0.5 * logsumexp_weighted(2 * (_log_abs(d[j, k]) + re[k]), w)
    cols = [float(np.logaddexp(2 * entry[0, k], 2 * entry[1, k]) / 2) for k in range(2)]
    return ColumnNorms(
        y11=LogMagnitude(entry[0, 0]),
        y22=LogMagnitude(entry[1, 1]),
        y21=LogMagnitude(entry[1, 0]),
        y12=LogMagnitude(entry[0, 1]),
        column1=LogMagnitude(cols[0]),
        column2=LogMagnitude(cols[1]),
    )


@dataclass(frozen=True)
class CrossProducts:
    """``G[j][k] = <Y[j], Z[k]>`` in scaled form and ``Ghat = |G| / (||Y[j]|| ||Z[k]||)``."""

    G: tuple
    Ghat: np.ndarray
    norms_y: ColumnNorms
    norms_z: ColumnNorms

    def value(self) -> np.ndarray:
        return np.array([[g.value for g in row] for row in self.G])


def _check_pair(fm_y: FundamentalMatrix, fm_z: FundamentalMatrix):
    if fm_y.system != DIRECT or fm_z.system != ADJOINT:
        raise PairingError("expected a direct fundamental matrix and an adjoint one")
    if fm_y.lam.lam != fm_z.lam.lam:
        raise PairingError(f"spectral parameters differ: {fm_y.lam.lam} vs {fm_z.lam.lam}")
    if fm_y.grid != fm_z.grid:
        raise PairingError("fundamental matrices live on distinct grids")


def cross_inner_products(fm_y: FundamentalMatrix, fm_z: FundamentalMatrix) -> CrossProducts:
    _check_pair(fm_y, fm_z)
    x = fm_y.grid.nodes
    w = fm_y.grid.weights
    dy, dz = fm_y.dephased(), fm_z.dephased()
    ey = fm_y.phase_exponents(x)
    ez = fm_z.phase_exponents(x)
    G = []
    for j in range(2):
        row = []
        for k in range(2):
            expo = ey[j] + np.conj(ez[k])
            top = float(np.max(expo.real))
            integrand = (dy[0, j] * np.conj(dz[0, k]) + dy[1, j] * np.conj(dz[1, k])) * np.exp(expo - top)
            row.append(ScaledComplex(complex(np.dot(w, integrand)), top))
        G.append(tuple(row))
    ny, nz = column_norms(fm_y), column_norms(fm_z)
    col_y = (ny.column1, ny.column2)
    col_z = (nz.column1, nz.column2)
    ghat = np.empty((2, 2))
    for j in range(2):
        for k in range(2):
            ghat[j, k] = math.exp(G[j][k].log_abs - col_y[j].log_value - col_z[k].log_value)
    return CrossProducts(tuple(G), ghat, ny, nz)


def combination_log_norm(fm: FundamentalMatrix, c) -> float:
    """``log ||c1 Y[1] + c2 Y[2]||`` without forming the columns linearly."""
    c = np.asarray(c, dtype=complex)
    size = float(np.max(np.abs(c)))
    if size == 0.0:
        return -math.inf
    c = c / size  # keeps |c|^2 clear of underflow
    d = fm.dephased()
    re = _log_phase_real(fm)
    e1, e2 = fm.phase_exponents(fm.grid.nodes)
    top = np.maximum(re[0], re[1])
    f1 = np.exp(e1 - top)
    f2 = np.exp(e2 - top)
    v1 = c[0] * d[0, 0] * f1 + c[1] * d[0, 1] * f2
    v2 = c[0] * d[1, 0] * f1 + c[1] * d[1, 1] * f2
    sq = np.abs(v1) ** 2 + np.abs(v2) ** 2
    return math.log(size) + 0.5 * logsumexp_weighted(2 * top + _log_abs(sq), fm.grid.weights)


def combination_inner(cross: CrossProducts, c, ct) -> ScaledComplex:
    """``<c1 Y[1] + c2 Y[2], ct1 Z[1] + ct2 Z[2]>`` from the cross products."""
    total = ScaledComplex(0j, -math.inf)
    for j in range(2):
        for k in range(2):
            coef = c[j] * np.conj(ct[k])
            if coef != 0:
                total = total + cross.G[j][k] * complex(coef)
    return total


def random_unit_coefficients(count: int = AUDIT_SAMPLES, seed: int = AUDIT_SEED) -> np.ndarray:
    """``count`` points uniform on the unit sphere of C^2, shape (count, 2)."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, 2)) + 1j * rng.standard_normal((count, 2))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass(frozen=True)
class AuditReport(SandwichReport):
    """Lower-bound audit; ``lower_ratio`` is the worst-case empirical constant."""

    tau: float = 0.0
    active: bool = True


def lower_bound_audit(fm: FundamentalMatrix, samples=None, threshold: float = AUDIT_THRESHOLD) -> AuditReport:
    """Worst case of ``||C1 Y[1] + C2 Y[2]|| / (|C1| ||Y[1]|| + |C2| ||Y[2]||)`` over samples.

    Below ``|Im lambda| < threshold`` the report is marked inactive: the bound
    is only claimed for sufficiently large ``|Im lambda|``.
    """
    if samples is None:
        samples = random_unit_coefficients()
    samples = [np.asarray(s.direct if isinstance(s, CombinationCoefficients) else s, complex) for s in samples]
    norms = column_norms(fm)
    ratios = []
    for c in samples:
        terms = []
        for ck, nk in ((c[0], norms.column1), (c[1], norms.column2)):
            if ck != 0:
                terms.append(math.log(abs(ck)) + nk.log_value)
        denom = float(np.logaddexp.reduce(terms)) if terms else -math.inf
        ratios.append(math.exp(combination_log_norm(fm, c) - denom))
    tau = fm.param.tau
    return AuditReport(
        quantity="combination lower bound",
        lower_ratio=min(ratios),
        upper_ratio=max(ratios),
        lambdas=(fm.lam.lam,),
        ratios=tuple(ratios),
        tau=tau,
        active=abs(tau) >= threshold,
    )


def _solve_pair(V, lam, grid, tol):
    fm_y, _ = solve_fundamental(V, lam, DIRECT, grid, tol, direct_fallback=True)
    fm_z, _ = solve_fundamental(V, lam, ADJOINT, grid, tol, direct_fallback=True)
    return fm_y, fm_z


def _map(func, items, threads):
    if threads <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


@dataclass(frozen=True)
class Lemma1Row:
    tau: float
    log_norm_y: float
    log_norm_z: float
    log_inner: float
    ratio: float
    log_product_normalized: float | None = None


@dataclass(frozen=True)
class Lemma1Table:
    rows: tuple
    skipped: tuple = ()

    def ratios(self):
        return np.array([r.ratio for r in self.rows])

    def taus(self):
        return np.array([r.tau for r in self.rows])


def lemma1_sweep(
    V: Potential,
    sigma: float,
    tau_list,
    coeffs: CombinationCoefficients,
    normalize: bool = False,
    tol: float = PICARD_TOL,
    threads: int = 1,
) -> Lemma1Table:
    """Ratio ``|<y, z>| / (||y|| ||z||)`` along ``lambda = sigma + i tau``.

    ``y = C1 Y[1] + C2 Y[2]`` solves the direct system and
    ``z = C1t Z[1] + C2t Z[2]`` the adjoint one.  With ``normalize`` the table
    also carries ``log(||y|| ||z||)`` after rescaling ``z`` so that
    ``<y, z> = 1``.  Rows with ``<y, z> = 0`` are skipped and listed.
    """
    taus = [float(t) for t in tau_list]
    if any(t <= 0 for t in taus) or any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau_list must be positive and increasing")

    def one(tau):
        lam = SpectralParameter.of(complex(sigma, tau))
        fm_y, fm_z = _solve_pair(V, lam, Grid.for_lambda(lam.lam), tol)
        cross = cross_inner_products(fm_y, fm_z)
        ly = combination_log_norm(fm_y, coeffs.direct)
        lz = combination_log_norm(fm_z, coeffs.adjoint)
        inner = combination_inner(cross, coeffs.direct, coeffs.adjoint)
        return tau, ly, lz, inner.log_abs

    rows, skipped = [], []
    for tau, ly, lz, li in _map(one, taus, threads):
        if li == -math.inf:
            skipped.append((tau, str(NonNormalizableError(f"<y, z> vanishes at tau = {tau}"))))
            continue
        ratio = math.exp(li - ly - lz)
        rows.append(Lemma1Row(tau, ly, lz, li, ratio, (ly + lz - li) if normalize else None))
    return Lemma1Table(tuple(rows), tuple(skipped))


def normalized_pair(V: Potential, lam, coeffs: CombinationCoefficients, grid: Grid | None = None, tol=PICARD_TOL):
    """Linear-scale pair ``(y, z)`` with ``<y, z> = 1`` (moderate ``|Im lambda|`` only)."""
    lam = SpectralParameter.of(lam)
    grid = grid or Grid.for_lambda(lam.lam)
    fm_y, fm_z = _solve_pair(V, lam, grid, tol)
    c, ct = coeffs.direct, coeffs.adjoint
    y = fm_y.column(1) * c[0] + fm_y.column(2) * c[1]
    z = fm_z.column(1) * ct[0] + fm_z.column(2) * ct[1]
    p = inner_product(y, z)
    if p == 0:
        raise NonNormalizableError(f"<y, z> vanishes at lambda = {lam.lam}")
    return y, z / np.conj(p)


# ---------------------------------------------------------------------------
# envelope scans
# ---------------------------------------------------------------------------


def _envelope_report(name, lams, log_measured, log_shape):
    ratios = np.exp(np.asarray(log_measured) - np.asarray(log_shape))
    return SandwichReport(name, float(ratios.min()), float(ratios.max()), tuple(lams), tuple(float(r) for r in ratios))


@dataclass(frozen=True)
class AsymptoticsScan:
    """Column-norm envelopes and cross-product trends along ``sigma + i tau``."""

    taus: np.ndarray
    sandwiches: dict
    ghat: np.ndarray  # (len(taus), 2, 2)
    log_abs_g: np.ndarray  # (len(taus), 2, 2)

    def off_diagonal_trends(self):
        """``|G12| (tau+1)`` and ``|G21| (tau+1) exp(-2 pi tau)``."""
        t = self.taus
        g12 = np.exp(self.log_abs_g[:, 0, 1] + np.log(t + 1))
        g21 = np.exp(self.log_abs_g[:, 1, 0] + np.log(t + 1) - 2 * np.pi * t)
        return g12, g21


def asymptotics_scan(V: Potential, sigma: float, taus, tol=PICARD_TOL, threads: int = 1) -> AsymptoticsScan:
    taus = np.asarray([float(t) for t in taus])
    lams = [complex(sigma, t) for t in taus]

    def one(lam):
        lam = SpectralParameter.of(lam)
        fm_y, fm_z = _solve_pair(V, lam, Grid.for_lambda(lam.lam), tol)
        return cross_inner_products(fm_y, fm_z)

    crosses = _map(one, lams, threads)
    decay = np.log(np.sqrt(taus) + 1)  # log of (sqrt(tau) + 1)
    grow = np.pi * taus - decay
    small = -decay
    series = {
        "||Y11||": ([c.norms_y.y11.log_value for c in crosses], small),
        "||Y22||": ([c.norms_y.y22.log_value for c in crosses], grow),
        "||Y[1]||": ([c.norms_y.column1.log_value for c in crosses], small),
        "||Y[2]||": ([c.norms_y.column2.log_value for c in crosses], grow),
        "||Z[1]||": ([c.norms_z.column1.log_value for c in crosses], grow),
        "||Z[2]||": ([c.norms_z.column2.log_value for c in crosses], small),
    }
    sandwiches = {name: _envelope_report(name, lams, m, s) for name, (m, s) in series.items()}
    ghat = np.array([c.Ghat for c in crosses])
    log_abs_g = np.array([[[g.log_abs for g in row] for row in c.G] for c in crosses])
    return AsymptoticsScan(taus, sandwiches, ghat, log_abs_g)


# ---------------------------------------------------------------------------
# trend assertions over a scan
# ---------------------------------------------------------------------------

#: allowed spread of an envelope ratio relative to its value at the first tau
SANDWICH_BAND = 4.0
#: a "decreasing" sequence may grow by this factor between consecutive rungs
TREND_SLACK = 1.2
GHAT_DIAG_BAND = (0.05, 1.0)


@dataclass(frozen=True)
class ScanCheck:
    name: str
    passed: bool
    values: tuple
    detail: str = ""


def scan_checks(scan: AsymptoticsScan) -> tuple:
    """Sandwich bands, off-diagonal decay trends and diagonal bands of a scan.

    * every envelope ratio stays within ``SANDWICH_BAND`` of its first value;
    * ``Ghat12 (tau+1)`` and ``Ghat21 (tau+1) exp(-2 pi tau)`` decrease up to
      ``TREND_SLACK`` per rung;
    * ``Ghat11`` and ``Ghat22`` stay inside ``GHAT_DIAG_BAND``.
    """
    out = []
    for name, rep in scan.sandwiches.items():
        rel = np.asarray(rep.ratios) / rep.ratios[0]
        ok = bool(np.all(rel <= SANDWICH_BAND) and np.all(rel >= 1.0 / SANDWICH_BAND))
        out.append(ScanCheck(f"sandwich {name}", ok, tuple(float(v) for v in rel), f"band {rel.max() / rel.min():.3f}"))
    t = scan.taus
    with np.errstate(divide="ignore"):
        log_g12 = np.log(scan.ghat[:, 0, 1]) + np.log(t + 1)
        log_g21 = np.log(scan.ghat[:, 1, 0]) + np.log(t + 1) - 2 * np.pi * t
    for name, logs in (("Ghat12*(tau+1)", log_g12), ("Ghat21*(tau+1)*exp(-2 pi tau)", log_g21)):
        vals = tuple(float(v) for v in np.exp(logs))
        ok = all(b == -math.inf or b - a <= math.log(TREND_SLACK) for a, b in zip(logs, logs[1:]))
        out.append(ScanCheck(f"decay {name}", ok, vals))
    lo, hi = GHAT_DIAG_BAND
    for j in range(2):
        vals = tuple(float(v) for v in scan.ghat[:, j, j])
        ok = all(lo <= v <= hi for v in vals)
        out.append(ScanCheck(f"band Ghat{j + 1}{j + 1}", ok, vals, f"[{lo}, {hi}]"))
    return tuple(out)
