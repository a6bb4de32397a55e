import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from andersonlab.eigensolver import eigenpairs_symmetric as eigenpairs
from andersonlab.ids import IDSTable
from andersonlab.lattice import AndersonModel, DisorderSpec, HoppingKernel, LatticeGeometry, build_hamiltonian, sample_disorder
from andersonlab.reduction import (
    LocalizationReport,
    _wilson,
    bernoulli_sample,
    box_distance,
    box_hamiltonian,
    decompose,
    fit_decay,
    local_spectra,
    localization_centers,
    match_eigenvalues,
    scales,
    summarize_reductions,
)

NN = HoppingKernel.nearest_neighbor(1)
IDENTITY = IDSTable(np.array([0.0, 1.0]), np.array([0.0, 1.0]))


class TestDecompose:
    def test_small_ring(self):
        d = decompose(LatticeGeometry(1, 10), 3, 2)
        assert d.origins.ravel().tolist() == [0, 5]
        assert np.flatnonzero(d.covered()).tolist() == [0, 1, 2, 5, 6, 7]
        assert d.leftover_fraction == pytest.approx(0.4)
        assert box_distance(d, 0, 1) == 3
        assert d.box_of(np.arange(10)).tolist() == [0, 0, 0, -1, -1, 1, 1, 1, -1, -1]

    def test_guards(self):
        with pytest.raises(ValueError):
            decompose(LatticeGeometry(1, 10), 8, 3)
        with pytest.raises(ValueError):
            decompose(LatticeGeometry(1, 10), 3, 0)

    def test_scales(self):
        assert scales(1000) == (56, 21)
        assert [scales(1000, 8, c2)[1] for c2 in (2, 3, 4)] == [14, 21, 28]

    @given(st.integers(1, 2), st.integers(6, 16), st.integers(1, 4), st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_invariants(self, dim, side, box, buf):
        assume(box + buf <= side)
        g = LatticeGeometry(dim, side)
        d = decompose(g, box, buf)
        cover = d.covered()
        # boxes are disjoint and cover exactly box_count * box^d sites
        assert cover.sum() == d.box_count * box**dim
        assert d.leftover_fraction == pytest.approx(1 - cover.mean())
        owner = d.box_of(np.arange(g.site_count))
        assert np.array_equal(owner >= 0, cover)
        for j in range(d.box_count):
            assert np.all(owner[d.box_sites(j)] == j)
        for j in range(d.box_count):
            for k in range(j + 1, d.box_count):
                assert box_distance(d, j, k) >= buf + 1


class TestFitDecay:
    def test_planted_exponential(self):
        g = LatticeGeometry(1, 61)
        dist = g.distance(g.all_coords, np.array([17]))
        v = 2.0 * np.exp(-0.3 * dist)
        center, xi, pref, resid, point = fit_decay(v, g)
        assert center == 17 and not point
        assert xi == pytest.approx(0.3, abs=1e-12)
        assert pref == pytest.approx(2.0, rel=1e-10)
        assert resid < 1e-12

    def test_planted_2d(self):
        g = LatticeGeometry(2, 15)
        dist = g.distance(g.all_coords, np.array([3, 9]))
        _, xi, _, _, _ = fit_decay(-np.exp(-0.7 * dist), g)
        assert xi == pytest.approx(0.7, abs=1e-12)

    def test_point_mass(self):
        g = LatticeGeometry(1, 20)
        v = np.zeros(20)
        v[4] = 1.0
        center, xi, _, _, point = fit_decay(v, g)
        assert center == 4 and point and np.isnan(xi)

    def test_tie_takes_lowest(self):
        v = np.array([0.0, 0.5, 0.1, 0.5, 0.0, 0.0, 0.0, 0.0])
        assert fit_decay(v, LatticeGeometry(1, 8))[0] == 1


@pytest.fixture(scope="module")
def zero_hopping():
    """Zero hopping: eigenvectors are site deltas and box spectra equal the parent's."""
    g = LatticeGeometry(1, 40)
    omega = sample_disorder(DisorderSpec.uniform(), g, 3, 0)
    pairs = eigenpairs(build_hamiltonian(HoppingKernel.zero(1), g, omega), method="lapack")
    return g, omega, pairs


class TestCenters:
    def test_zero_hopping(self, zero_hopping):
        g, omega, pairs = zero_hopping
        rep = localization_centers(pairs, (0.2, 0.6))
        inside = np.flatnonzero((omega >= 0.2) & (omega <= 0.6))
        assert sorted(rep.centers.tolist()) == inside.tolist()
        assert np.all(rep.point_mass) and np.isnan(rep.median_decay)
        assert np.allclose(rep.eigenvalues, omega[rep.centers])

    def test_strong_disorder_decays(self):
        g = LatticeGeometry(1, 120)
        h = AndersonModel(NN, DisorderSpec.uniform(0, 1, 16.0)).realize(g, 1, 0)
        rep = localization_centers(eigenpairs(h, method="lapack"), (4.0, 12.0))
        assert len(rep) > 10
        # xi ~ log(W/2) or so at strong disorder; anything clearly positive shows exponential localization
        assert rep.median_decay > 0.5
        assert np.all(np.abs(np.diff(np.sort(rep.eigenvalues))) >= 0)


class TestLocalSpectra:
    def test_dirichlet_is_restriction(self):
        g = LatticeGeometry(1, 20)
        omega = np.arange(20) * 0.1
        d = decompose(g, 5, 3)
        h = box_hamiltonian(NN, omega, d, 1, boundary="dirichlet")
        sites = d.box_sites(1)
        assert np.array_equal(np.diag(h), omega[sites])
        assert h[0, -1] == 0 and h[0, 1] == 1

    def test_periodic_box_wraps(self):
        d = decompose(LatticeGeometry(1, 20), 5, 3)
        h = box_hamiltonian(NN, np.zeros(20), d, 0)
        assert h[0, -1] == 1
        with pytest.raises(ValueError):
            box_hamiltonian(NN, np.zeros(20), d, 0, boundary="free")

    def test_shape_guard(self):
        d = decompose(LatticeGeometry(1, 20), 5, 3)
        with pytest.raises(ValueError):
            local_spectra(NN, np.zeros(19), d, (0, 1))

    def test_zero_hopping_exact_match(self, zero_hopping):
        g, omega, pairs = zero_hopping
        d = decompose(g, 6, 2)
        rep = localization_centers(pairs, (0.0, 1.0))
        for boundary in ("periodic", "dirichlet"):
            locs = local_spectra(HoppingKernel.zero(1), omega, d, (0.0, 1.0), boundary=boundary)
            red = match_eigenvalues(rep, locs, d, realization=0)
            assert red.in_box_centers == int(d.covered().sum()) and red.matched == red.in_box_centers
            assert np.all(red.errors == 0)
            assert red.leftover_centers == 40 - red.in_box_centers
            s = summarize_reductions([red])
            assert s["matched_fraction"] == 1.0 and s["error_median"] == 0


def fake_report(values, centers):
    n = len(values)
    nan = np.full(n, np.nan)
    return LocalizationReport(np.array(values, float), np.arange(n), np.array(centers), nan, nan, nan, np.ones(n, bool))


class TestMatching:
    def test_greedy_injective(self):
        d = decompose(LatticeGeometry(1, 10), 3, 2)
        rep = fake_report([0.5, 0.52, 0.9, 0.3], [1, 2, 6, 4])
        red = match_eigenvalues(rep, [np.array([0.51]), np.array([0.95, 0.2])], d, realization=7)
        # 0.5 takes the only local value in box 0; 0.52 is left unmatched
        assert red.pairs == [(0, 0.5, 0.51, pytest.approx(0.01)), (1, 0.9, 0.95, pytest.approx(0.05))]
        assert (red.leftover_centers, red.in_box_centers, red.unmatched, red.total) == (1, 3, 2, 4)
        assert red.multi_local_boxes == 1

    def test_box_count_guard(self):
        d = decompose(LatticeGeometry(1, 10), 3, 2)
        with pytest.raises(ValueError):
            match_eigenvalues(fake_report([0.5], [1]), [np.array([0.5])], d)

    def test_summary(self):
        d = decompose(LatticeGeometry(1, 10), 3, 2)
        r1 = match_eigenvalues(fake_report([0.5], [1]), [np.array([0.6]), np.empty(0)], d)
        r2 = match_eigenvalues(fake_report([0.5, 0.7], [5, 9]), [np.empty(0), np.array([0.5])], d)
        s = summarize_reductions([r1, r2])
        assert s["matched"] == 2 and s["in_box_centers"] == 2 and s["global_in_window"] == 3
        assert s["error_median"] == pytest.approx(0.05)
        assert np.isnan(summarize_reductions([])["matched_fraction"])


class TestBernoulli:
    def test_wilson(self):
        lo, hi = _wilson(0, 10)
        assert lo == 0 and hi == pytest.approx(0.2775, abs=1e-4)
        lo, hi = _wilson(50, 100)
        assert (lo + hi) / 2 == pytest.approx(0.5)
        assert _wilson(0, 0) == (0.0, 1.0)

    def test_iid_boxes(self):
        # five iid uniform levels per box: P(X=1) = 5 p (1-p)^4 with p = |I|
        rng = np.random.default_rng(11)
        boxes = list(rng.random((20000, 5)))
        est = bernoulli_sample(boxes, (0.3, 0.31), 5, IDENTITY)
        exact = 5 * 0.01 * 0.99**4
        assert est.expected == pytest.approx(0.05)
        # a 95% interval misses one seed in twenty, so check a 4 sigma band instead
        assert abs(est.p_hat - exact) <= 4 * np.sqrt(exact * (1 - exact) / est.samples)
        assert est.ci_low < est.p_hat < est.ci_high
        assert est.ratio == pytest.approx(0.96, abs=0.15)
        assert len(est.increments) == 3 and all(inc["z"] < 4 for inc in est.increments)
        assert np.all((est.positions >= 0) & (est.positions <= 1))

    def test_guards(self):
        boxes = [np.array([0.5])] * 100
        with pytest.raises(ValueError, match="small"):
            bernoulli_sample(boxes, (0.0, 0.5), 5, IDENTITY, min_samples=10)
        with pytest.raises(ValueError, match="samples"):
            bernoulli_sample(boxes, (0.3, 0.31), 5, IDENTITY)
