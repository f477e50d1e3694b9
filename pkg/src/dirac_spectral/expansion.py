"""Rank-one spectral projectors, their norms, partial sums and a divergence witness.

A biorthogonal pair ``(y, z)`` defines ``P f = <f, z> y``.  Its operator norm
on the two-component L2 space is exactly ``||y|| ||z||``; the weaker bound in
terms of component norms,

    ||P|| >= (||y1|| + ||y2||)(||z1|| + ||z2||) / (2 sqrt 2) >= ||y|| ||z|| / (2 sqrt 2),

comes from testing ``P`` on ``(0, z2/||z2||)`` and ``(z1/||z1||, 0)`` and is
kept as a checked bound.  Unbounded growth of ``||P_n||`` along a system rules
out the basis property.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import CombinationCoefficients, normalized_pair
from .bvp import EigenRecord
from .dirac_solver import PICARD_TOL, Potential
from .errors import NormalizationError
from .function_space import GridFunction2, LogMagnitude, h_norm, inner_product

NORMALIZATION_TOL = 1e-8
UNBOUNDED = "unbounded-trend"
BOUNDED = "bounded"
INCONCLUSIVE = "inconclusive"
#: growth of the running max of log-norms that counts as a trend
TREND_LOG_GROWTH = math.log(10.0)
#: growth at or below which the sequence is called bounded
FLAT_LOG_GROWTH = 0.1 * math.log(10.0)

_LOG_2SQRT2 = 1.5 * math.log(2.0)


@dataclass(frozen=True, eq=False)
class RankOneProjector:
    """``f -> <f, z> y``; both functions on one grid."""

    y: GridFunction2
    z: GridFunction2

    def __post_init__(self):
        self.y._check(self.z)

    @classmethod
    def from_record(cls, rec: EigenRecord) -> "RankOneProjector":
        _require_normalized(rec)
        return cls(rec.y_n, rec.z_n)


def apply_projector(p: RankOneProjector, f: GridFunction2) -> GridFunction2:
    return p.y * inner_product(f, p.z)


def _component_log_norms(f: GridFunction2):
    zero = np.zeros_like(f.component1)
    n1 = h_norm(GridFunction2(f.component1, zero, f.grid))
    n2 = h_norm(GridFunction2(zero, f.component2, f.grid))
    return n1, n2


@dataclass(frozen=True)
class ProjectorNorm:
    """Exact norm, the ``/(2 sqrt 2)`` bound, the component bound and the probe values."""

    exact: LogMagnitude
    paper_lower_bound: LogMagnitude
    component_bound: LogMagnitude
    maximizer_value: LogMagnitude
    probe_values: tuple  # (first-component probe, second-component probe); None if that component of z is 0


def _log_output_norm(p: RankOneProjector, f: GridFunction2) -> LogMagnitude:
    c = inner_product(f, p.z)
    if c == 0:
        return LogMagnitude(-math.inf)
    return LogMagnitude(math.log(abs(c))) * h_norm(p.y)


def projector_norm(p: RankOneProjector) -> ProjectorNorm:
    ny, nz = h_norm(p.y), h_norm(p.z)
    exact = ny * nz
    y1, y2 = _component_log_norms(p.y)
    z1, z2 = _component_log_norms(p.z)
    component = LogMagnitude((y1 + y2).log_value + (z1 + z2).log_value - _LOG_2SQRT2)

    maximizer = LogMagnitude(-math.inf)
    if nz.log_value > -math.inf:
        maximizer = _log_output_norm(p, p.z / nz.value)
    probes = []
    zero = np.zeros_like(p.z.component1)
    for comp, norm in ((1, z1), (2, z2)):
        if norm.log_value == -math.inf:
            probes.append(None)
            continue
        if comp == 1:
            f = GridFunction2(p.z.component1 / norm.value, zero, p.z.grid)
        else:
            f = GridFunction2(zero, p.z.component2 / norm.value, p.z.grid)
        probes.append(_log_output_norm(p, f))
    return ProjectorNorm(
        exact=exact,
        paper_lower_bound=LogMagnitude(exact.log_value - _LOG_2SQRT2),
        component_bound=component,
        maximizer_value=maximizer,
        probe_values=tuple(probes),
    )


def _require_normalized(rec: EigenRecord):
    if rec.z_n is None or not rec.biorthogonal:
        raise NormalizationError(f"record at lambda = {rec.lambda_n} has no biorthogonal partner")
    pairing = inner_product(rec.y_n, rec.z_n)
    if not abs(pairing - 1.0) < NORMALIZATION_TOL:
        raise NormalizationError(f"<y_n, z_n> = {pairing} at lambda = {rec.lambda_n}, expected 1")


def partial_sum(system, f: GridFunction2, N: int) -> GridFunction2:
    """``sum_{n < N} <f, z_n> y_n`` over the first ``N`` records in the given order."""
    system = list(system)
    if not 0 <= N <= len(system):
        raise ValueError(f"N = {N} outside 0..{len(system)}")
    out = GridFunction2.zeros(f.grid)
    for rec in system[:N]:
        _require_normalized(rec)
        out = out + apply_projector(RankOneProjector(rec.y_n, rec.z_n), f)
    return out


# ---------------------------------------------------------------------------
# divergence witness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DivergenceReport:
    n: tuple
    lambdas: tuple
    log_norms: tuple
    verdict: str
    tail_growth: float
    log_witness: tuple | None = None

    @property
    def witness_coefficients(self):
        """``|<f, z_n>| ||y_n||`` (``inf`` where not representable)."""
        if self.log_witness is None:
            return None
        return tuple(LogMagnitude(v).value for v in self.log_witness)

    def rows(self):
        witness = self.log_witness or (None,) * len(self.n)
        for n, lam, ln, lw in zip(self.n, self.lambdas, self.log_norms, witness):
            yield n, lam.real, lam.imag, ln, ("" if lw is None else lw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "re_lambda", "im_lambda", "log_proj_norm", "witness"])
        for n, re, im, ln, lw in self.rows():
            w.writerow([n, repr(re), repr(im), repr(ln), lw if lw == "" else repr(lw)])
        return buf.getvalue()

    def to_json(self) -> str:
        body = {
            "verdict": self.verdict,
            "tail_growth": self.tail_growth,
            "records": [
                {"n": n, "lambda": [re, im], "log_proj_norm": ln, "log_witness": (None if lw == "" else lw)}
                for n, re, im, ln, lw in self.rows()
            ],
        }
        return json.dumps(body, indent=2, sort_keys=True)


def classify_growth(log_norms) -> tuple[str, float]:
    """Verdict from the rise of the running max of ``log_norms`` over the second half."""
    log_norms = np.asarray(log_norms, dtype=float)
    if log_norms.size < 2:
        return INCONCLUSIVE, 0.0
    running = np.maximum.accumulate(log_norms)
    start = (log_norms.size - 1) // 2
    growth = float(running[-1] - running[start])
    if growth >= TREND_LOG_GROWTH:
        return UNBOUNDED, growth
    if growth <= FLAT_LOG_GROWTH:
        return BOUNDED, growth
    return INCONCLUSIVE, growth


def divergence_witness(system, probe_f: GridFunction2 | None = None) -> DivergenceReport:
    system = list(system)
    if not system:
        raise ValueError("divergence_witness needs at least one record")
    log_norms = []
    witness = [] if probe_f is not None else None
    for rec in system:
        _require_normalized(rec)
        p = RankOneProjector(rec.y_n, rec.z_n)
        log_norms.append(projector_norm(p).exact.log_value)
        if probe_f is not None:
            witness.append(_log_output_norm(p, probe_f).log_value)
    verdict, growth = classify_growth(log_norms)
    return DivergenceReport(
        n=tuple(range(len(system))),
        lambdas=tuple(complex(r.lambda_n) for r in system),
        log_norms=tuple(log_norms),
        verdict=verdict,
        tail_growth=growth,
        log_witness=None if witness is None else tuple(witness),
    )


def synthetic_system(
    V: Potential,
    taus,
    sigma: float = 0.0,
    coeffs: CombinationCoefficients | None = None,
    tol: float = PICARD_TOL,
):
    """Biorthogonally normalized pairs at ``lambda_n = sigma + i tau_n``, as records.

    Not eigenfunctions of any particular boundary problem: a stand-in for a
    system whose eigenvalues drift away from the real axis.
    """
    coeffs = coeffs or CombinationCoefficients(1, 1, 1, 1)
    out = []
    for tau in taus:
        lam = complex(sigma, tau)
        y, z = normalized_pair(V, lam, coeffs, tol=tol)
        out.append(EigenRecord(lam, 1, y, z, biorthogonal=True))
    return tuple(out)


def log_taus(count: int = 30):
    """``tau_n = log(n + 1)`` for ``n = 1..count``."""
    return tuple(math.log(n + 1) for n in range(1, count + 1))
