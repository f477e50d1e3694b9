import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import PRESETS
from dirac_spectral.asymptotics import CombinationCoefficients, lemma1_sweep
from dirac_spectral.bvp import EigenRecord, biorthogonal_system, find_eigenvalues
from dirac_spectral.dirac_solver import ZeroPotential
from dirac_spectral.errors import GridMismatchError, NormalizationError
from dirac_spectral.expansion import (
    BOUNDED,
    INCONCLUSIVE,
    UNBOUNDED,
    RankOneProjector,
    apply_projector,
    classify_growth,
    divergence_witness,
    log_taus,
    partial_sum,
    projector_norm,
    synthetic_system,
)
from dirac_spectral.function_space import Grid, GridFunction2, h_norm, inner_product

DEMO_NORM = 3 / (4 * math.log(2))
G = Grid(64)


def unit_first():
    c = np.full(G.size, 1 / math.sqrt(math.pi), complex)
    return GridFunction2(c, np.zeros(G.size), G)


def random_function(gen, grid=G, modes=6):
    x = grid.nodes
    out = []
    for _ in range(2):
        c = gen.standard_normal(modes) + 1j * gen.standard_normal(modes)
        out.append(sum(ck * np.exp(1j * (k - modes // 2) * x) for k, ck in enumerate(c)))
    return GridFunction2(out[0], out[1], grid)


@pytest.fixture(scope="module")
def demo_system():
    from dirac_spectral.bvp import BoundaryConditions

    bc = BoundaryConditions([[1, 0, 0, 0], [0, 1, 0, -2]])
    rep = find_eigenvalues(bc, ZeroPotential(), (-9, 9, -1, 1))
    return biorthogonal_system(rep, bc, ZeroPotential())


# ---------------------------------------------------------------------------
# projectors
# ---------------------------------------------------------------------------


def test_unit_self_pairing_examples():
    e = unit_first()
    p = RankOneProjector(e, e)
    out = apply_projector(p, e)
    np.testing.assert_allclose(out.component1, e.component1, atol=1e-14)
    g = GridFunction2(np.zeros(G.size), np.ones(G.size), G)
    assert apply_projector(p, g).sup() == 0
    n = projector_norm(p)
    assert n.exact.value == pytest.approx(1.0, rel=1e-14)


def test_projector_grid_mismatch():
    with pytest.raises(GridMismatchError):
        RankOneProjector(unit_first(), GridFunction2.zeros(Grid(32)))
    p = RankOneProjector(unit_first(), unit_first())
    with pytest.raises(GridMismatchError):
        apply_projector(p, GridFunction2.zeros(Grid(32)))


def test_demo_projection_two_quadrature_paths(demo_system):
    rec = demo_system[0]
    p = RankOneProjector.from_record(rec)
    grid = rec.y_n.grid
    f = GridFunction2(np.ones(grid.size), np.ones(grid.size), grid)
    out = apply_projector(p, f)
    # scalar form: f^T conj(z) integrated with an independent Gauss-Legendre rule
    lam = rec.lambda_n
    x, w = np.polynomial.legendre.leggauss(200)
    x = (x + 1) * np.pi / 2
    w = w * np.pi / 2
    zc = rec.z_n.component2[0] / np.exp(-1j * np.conj(lam) * grid.nodes[0])
    coeff = np.sum(w * np.conj(zc * np.exp(-1j * np.conj(lam) * x)))
    np.testing.assert_allclose(out.component2, coeff * rec.y_n.component2, rtol=1e-12)
    assert np.max(np.abs(out.component1)) == 0


@given(st.integers(0, 2**32 - 1))
def test_projector_linearity(seed):
    gen = np.random.default_rng(seed)
    y, z, f, g = (random_function(gen) for _ in range(4))
    a, b = complex(*gen.standard_normal(2)), complex(*gen.standard_normal(2))
    p = RankOneProjector(y, z)
    lhs = apply_projector(p, f * a + g * b)
    rhs = apply_projector(p, f) * a + apply_projector(p, g) * b
    assert (lhs - rhs).sup() <= 1e-12 * max(1.0, lhs.sup())


def test_norm_attainment_random_and_maximizer():
    gen = np.random.default_rng(11)
    y, z = random_function(gen), random_function(gen)
    z = z / np.conj(inner_product(y, z))
    p = RankOneProjector(y, z)
    n = projector_norm(p)
    # random unit inputs from the span of the two component probes, which contains z
    zero = np.zeros(G.size)
    e1 = GridFunction2(z.component1, zero, G)
    e2 = GridFunction2(zero, z.component2, G)
    e1, e2 = e1 / h_norm(e1).value, e2 / h_norm(e2).value
    best = 0.0
    for _ in range(200):
        a = gen.standard_normal(2) + 1j * gen.standard_normal(2)
        a /= np.linalg.norm(a)
        f = e1 * a[0] + e2 * a[1]
        best = max(best, h_norm(apply_projector(p, f)).value)
    assert best <= n.exact.value * (1 + 1e-12)
    assert best >= 0.98 * n.exact.value
    assert n.maximizer_value.log_value == pytest.approx(n.exact.log_value, abs=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_norm_bounds(seed):
    gen = np.random.default_rng(seed)
    p = RankOneProjector(random_function(gen), random_function(gen))
    n = projector_norm(p)
    assert n.exact.log_value - n.paper_lower_bound.log_value == pytest.approx(1.5 * math.log(2), abs=1e-14)
    assert n.exact.log_value >= n.component_bound.log_value - 1e-12
    best_probe = max(v.log_value for v in n.probe_values)
    assert best_probe >= n.paper_lower_bound.log_value - 1e-12
    assert best_probe <= n.exact.log_value + 1e-12


def test_probe_values_absent_for_vanishing_component():
    e = unit_first()
    n = projector_norm(RankOneProjector(e, e))
    assert n.probe_values[1] is None
    assert n.probe_values[0].value == pytest.approx(1.0)


def test_demo_projector_norms(demo_system):
    assert len(demo_system) == 9
    for rec in demo_system:
        n = projector_norm(RankOneProjector.from_record(rec))
        assert n.exact.value == pytest.approx(DEMO_NORM, rel=1e-10)
        assert n.exact.value == pytest.approx(1.08202, abs=1e-5)
        assert n.component_bound.log_value <= n.exact.log_value + 1e-12


def test_idempotence_and_mutual_annihilation(demo_system):
    gen = np.random.default_rng(3)
    grid = demo_system[0].y_n.grid
    f = random_function(gen, grid)
    projs = [RankOneProjector.from_record(r) for r in demo_system]
    for i, p in enumerate(projs):
        once = apply_projector(p, f)
        twice = apply_projector(p, once)
        assert (twice - once).sup() <= 1e-10 * max(1.0, once.sup())
        for j, q in enumerate(projs):
            if i != j:
                assert apply_projector(q, once).sup() < 1e-7 * max(1.0, f.sup())


# ---------------------------------------------------------------------------
# partial sums
# ---------------------------------------------------------------------------


def test_partial_sum_reproduces_members(demo_system):
    for k in (0, 3, 8):
        y = demo_system[k].y_n
        out = partial_sum(demo_system, y, 9)
        assert (out - y).sup() < 1e-7
        assert partial_sum(demo_system, y, k).sup() < 1e-7


def test_partial_sum_edge_cases(demo_system):
    grid = demo_system[0].y_n.grid
    f = GridFunction2(np.ones(grid.size), np.zeros(grid.size), grid)
    # demo adjoint eigenfunctions have no first component
    assert partial_sum(demo_system, f, 9).sup() == 0
    g = GridFunction2(np.ones(grid.size), np.ones(grid.size), grid)
    assert partial_sum(demo_system, g, 0).sup() == 0
    with pytest.raises(ValueError):
        partial_sum(demo_system, g, 10)


def test_partial_sum_requires_normalized_records(demo_system):
    rec = demo_system[0]
    bad = EigenRecord(rec.lambda_n, 1, rec.y_n, rec.z_n * 2.0, biorthogonal=True)
    with pytest.raises(NormalizationError):
        partial_sum([bad], rec.y_n, 1)
    with pytest.raises(NormalizationError):
        partial_sum([EigenRecord(rec.lambda_n, 1, rec.y_n)], rec.y_n, 1)


# ---------------------------------------------------------------------------
# divergence witness
# ---------------------------------------------------------------------------


def test_demo_verdict_bounded(demo_system):
    rep = divergence_witness(demo_system)
    assert rep.verdict == BOUNDED
    np.testing.assert_allclose(np.exp(rep.log_norms), DEMO_NORM, rtol=1e-10)
    assert rep.witness_coefficients is None


def test_single_record_inconclusive(demo_system):
    assert divergence_witness(demo_system[:1]).verdict == INCONCLUSIVE
    with pytest.raises(ValueError):
        divergence_witness([])


def test_classify_growth_rule():
    assert classify_growth([0.0])[0] == INCONCLUSIVE
    assert classify_growth([0, 0, 0, 3])[0] == UNBOUNDED
    assert classify_growth([0, 1, 1, 1.1])[0] == BOUNDED
    assert classify_growth([0, 0, 0, 1.0])[0] == INCONCLUSIVE
    # the running max ignores dips
    verdict, growth = classify_growth([5, 0, 0, 0, 0])
    assert verdict == BOUNDED and growth == 0


@pytest.fixture(scope="module")
def synthetic_zero():
    return synthetic_system(ZeroPotential(), log_taus(30))


def test_synthetic_zero_unbounded(synthetic_zero):
    rep = divergence_witness(synthetic_zero)
    assert rep.verdict == UNBOUNDED
    assert rep.tail_growth >= math.log(10)
    taus = log_taus(30)
    for k in range(1, len(taus)):
        step = rep.log_norms[k] - rep.log_norms[k - 1]
        assert step >= math.pi * (taus[k] - taus[k - 1]) - math.log((taus[k] + 1) / (taus[k - 1] + 1)) - 1e-9


def test_sweep_to_divergence_linkage(synthetic_zero):
    taus = log_taus(30)
    rep = divergence_witness(synthetic_zero)
    assert rep.log_norms[-1] - rep.log_norms[0] >= math.pi * (taus[-1] - taus[0]) / 2
    # the same growth is visible in the sweep table, without forming the pairs
    tab = lemma1_sweep(ZeroPotential(), 0.0, taus, CombinationCoefficients(1, 1, 1, 1), normalize=True)
    np.testing.assert_allclose([r.log_product_normalized for r in tab.rows], rep.log_norms, atol=1e-9)


def test_witness_coefficients(synthetic_zero):
    gen = np.random.default_rng(1)
    grid = synthetic_zero[-1].y_n.grid
    f = random_function(gen, grid)
    recs = [r for r in synthetic_zero if r.y_n.grid == grid]
    rep = divergence_witness(recs, f)
    for rec, w in zip(recs, rep.witness_coefficients):
        ref = abs(inner_product(f, rec.z_n)) * h_norm(rec.y_n).value
        assert w == pytest.approx(ref, rel=1e-10)


def test_report_serialization(synthetic_zero):
    rep = divergence_witness(synthetic_zero[:3])
    lines = rep.to_csv().splitlines()
    assert lines[0] == "n,re_lambda,im_lambda,log_proj_norm,witness"
    assert len(lines) == 4
    assert lines[1].endswith(",")
    body = json.loads(rep.to_json())
    assert body["verdict"] == rep.verdict
    assert [r["n"] for r in body["records"]] == [0, 1, 2]


@pytest.mark.parametrize("name", ["constant", "trig"])
def test_synthetic_systems_are_normalized(name):
    recs = synthetic_system(PRESETS[name], [0.5, 1.0, 2.0], sigma=3.0)
    for rec in recs:
        assert inner_product(rec.y_n, rec.z_n) == pytest.approx(1.0, abs=1e-10)
        RankOneProjector.from_record(rec)


def test_log_taus():
    t = log_taus(3)
    assert t == (math.log(2), math.log(3), math.log(4))
