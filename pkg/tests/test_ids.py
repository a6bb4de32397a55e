import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from andersonlab.eigensolver import SpectrumSample, eigenvalues_symmetric
from andersonlab.ids import (
    EdgeAnchor,
    IDSTable,
    ProvenanceError,
    accumulate,
    evaluate,
    geometric_offsets,
    interval_for_mass,
    interval_mass,
    lifshitz_exponent_fit,
    merge_tables,
    quantile,
    read_table,
    write_table,
)
from andersonlab.lattice import AndersonModel, DisorderSpec, HoppingKernel, LatticeGeometry, Provenance


def sample(values, model_id="m", seed=None, realization=None):
    return SpectrumSample(np.sort(np.asarray(values, dtype=float)), None, Provenance(model_id, seed, realization))


@pytest.fixture(scope="module")
def uniform_table():
    """Zero hopping, uniform[0,1]: 10^4 pooled eigenvalues."""
    m = AndersonModel(HoppingKernel.zero(1), DisorderSpec.uniform())
    g = LatticeGeometry(1, 100)
    return IDSTable.from_spectra([eigenvalues_symmetric(m.realize(g, 1, r), method="lapack") for r in range(100)])


class TestAccumulate:
    def test_single_sample(self):
        t = accumulate(IDSTable.empty("m"), sample([1, 2, 3]))
        assert evaluate(t, 0.0) == 0
        assert evaluate(t, 1.0) == pytest.approx(1 / 3)
        assert evaluate(t, 3.0) == 1
        # linear interpolation between the knots at 2 and 3
        assert evaluate(t, 2.5) == pytest.approx(5 / 6)

    def test_same_sample_twice(self):
        s = sample([0.3, 1.1, 2.0, 2.0])
        once = accumulate(IDSTable.empty("m"), s)
        twice = accumulate(once, s)
        assert np.array_equal(once.knots, twice.knots)
        assert np.allclose(once.values, twice.values)
        assert twice.pooled_sites == 8 and twice.realizations == 2

    def test_model_mismatch(self):
        t = accumulate(IDSTable.empty("m"), sample([1.0]))
        with pytest.raises(ProvenanceError):
            accumulate(t, sample([2.0], model_id="other"))

    def test_uniform_cdf(self, uniform_table):
        e = np.linspace(-0.5, 1.5, 4001)
        assert np.max(np.abs(uniform_table.evaluate(e) - np.clip(e, 0, 1))) < 0.03
        assert uniform_table.pooled_sites == 10**4

    @given(st.lists(st.lists(st.floats(-5, 5), min_size=1, max_size=8), min_size=1, max_size=6), st.randoms())
    @settings(max_examples=50)
    def test_order_independent_and_monotone(self, spectra, rnd):
        samples = [sample(s) for s in spectra]
        a = IDSTable.empty("m")
        for s in samples:
            a = accumulate(a, s)
        shuffled = samples[:]
        rnd.shuffle(shuffled)
        b = IDSTable.empty("m")
        for s in shuffled:
            b = accumulate(b, s)
        c = IDSTable.from_spectra(samples)
        assert np.array_equal(a.knots, b.knots) and np.array_equal(a.knots, c.knots)
        assert np.array_equal(a.cumulative_counts, c.cumulative_counts)
        assert np.array_equal(b.cumulative_counts, c.cumulative_counts)
        assert np.all(np.diff(a.values) >= 0) and a.values[-1] == pytest.approx(1.0)
        assert a.pooled_sites == sum(len(s) for s in spectra)

    def test_recount_oracle(self):
        rng = np.random.default_rng(0)
        samples = [sample(rng.normal(size=7)) for _ in range(20)]
        t = merge_tables(IDSTable.from_spectra([s]) for s in samples)
        pooled = np.concatenate([s.eigenvalues for s in samples])
        for k in t.knots[::5]:
            assert t.evaluate(k) == pytest.approx(np.count_nonzero(pooled <= k) / pooled.size, abs=1e-15)

    def test_sources(self):
        t = IDSTable.from_spectra([sample([1.0], seed=4, realization=r) for r in (0, 1, 2, 5)])
        assert t.sources == ((4, 0, 2), (4, 5, 5))
        assert t.covers(4, 1) and not t.covers(4, 3) and not t.covers(3, 1)


class TestQueries:
    def test_midpoint(self):
        t = IDSTable(np.array([0.0, 1.0]), np.array([0.2, 0.4]))
        assert t.evaluate(0.5) == pytest.approx(0.3)
        assert t.evaluate(-1e300) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            IDSTable.empty().evaluate(0.0)

    def test_interval_mass(self, uniform_table):
        assert interval_mass(uniform_table, (0.4, 0.4)) == 0
        assert interval_mass(uniform_table, (-1, 2)) == 1
        assert interval_mass(uniform_table, (0.25, 0.75)) == pytest.approx(0.5, abs=0.03)
        with pytest.raises(ValueError):
            interval_mass(uniform_table, (1, 0))

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
    def test_additivity(self, a, b, c):
        a, b, c = sorted((a, b, c))
        t = IDSTable(np.array([-1.0, -0.5, 0.0, 1.0]), np.array([0.125, 0.25, 0.5, 1.0]))
        assert t.interval_mass(a, c) == pytest.approx(t.interval_mass(a, b) + t.interval_mass(b, c), abs=1e-15)

    def test_quantile_ends(self, uniform_table):
        assert quantile(uniform_table, 1.0) == uniform_table.knots[-1]
        assert quantile(uniform_table, uniform_table.values[0]) == uniform_table.knots[0]
        with pytest.raises(ValueError):
            quantile(uniform_table, 1.5)

    def test_quantile_round_trip(self, uniform_table):
        q = np.random.default_rng(1).uniform(uniform_table.values[0], 1, 100)
        assert np.max(np.abs(uniform_table.evaluate(uniform_table.quantile(q)) - q)) < 1e-12

    def test_leftmost_on_flat(self):
        t = IDSTable(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.25, 0.5, 0.5, 1.0]))
        assert t.quantile(0.5) == 1.0
        assert t.quantile(0.375) == pytest.approx(0.5)


class TestIntervalForMass:
    def test_interior(self, uniform_table):
        a, b = interval_for_mass(uniform_table, 0.5, 10, 100)
        assert a == pytest.approx(0.45, abs=0.02) and b == pytest.approx(0.55, abs=0.02)
        assert uniform_table.interval_mass(a, b) * 100 == pytest.approx(10, abs=1e-9)

    def test_edge(self, uniform_table):
        edge = uniform_table.knots[0]
        a, b = interval_for_mass(uniform_table, EdgeAnchor("lower"), 3, 100)
        assert a == edge and b == pytest.approx(uniform_table.quantile(uniform_table.values[0] + 0.03))
        a, b = interval_for_mass(uniform_table, EdgeAnchor("upper"), 3, 100)
        assert b == uniform_table.knots[-1]
        assert uniform_table.interval_mass(a, b) == pytest.approx(0.03, abs=1e-12)

    def test_zero_mass(self, uniform_table):
        assert interval_for_mass(uniform_table, 0.3, 0, 100) == (0.3, 0.3)

    def test_too_much(self, uniform_table):
        with pytest.raises(ValueError):
            interval_for_mass(uniform_table, 0.95, 20, 100)
        with pytest.raises(ValueError):
            interval_for_mass(uniform_table, 0.5, 200, 100)


class TestLifshitz:
    @pytest.mark.parametrize("rho", [0.5, 1.0])
    def test_planted(self, rho):
        e = np.geomspace(1e-3, 3, 20000)
        t = IDSTable(e, np.exp(-(e ** -rho)))
        fit = lifshitz_exponent_fit(t, 0.0, geometric_offsets(1.0, 6))
        assert fit.exponent == pytest.approx(rho, abs=1e-6 if rho == 0.5 else 1e-5)

    def test_skips_empty(self):
        t = IDSTable(np.array([0.3, 1.0, 2.0]), np.array([0.01, 0.2, 1.0]))
        fit = lifshitz_exponent_fit(t, 0.0, [2.0, 1.5, 1.0, 0.5, 0.1])
        assert list(fit.offsets_skipped) == [2.0, 0.1]
        assert list(fit.offsets_used) == [1.5, 1.0, 0.5]
        with pytest.raises(ValueError):
            lifshitz_exponent_fit(t, 0.0, [0.1, 0.05, 0.5])


class TestFile:
    def test_round_trip(self, tmp_path, uniform_table):
        t = uniform_table.with_sources([(1, 0, 99)])
        path = write_table(t, tmp_path / "t.tsv")
        back = read_table(path)
        assert np.array_equal(back.knots, t.knots) and np.array_equal(back.values, t.values)
        assert (back.pooled_sites, back.realizations, back.model_id, back.sources) == (t.pooled_sites, t.realizations, t.model_id, t.sources)

    def test_rejects_other_files(self, tmp_path):
        p = tmp_path / "x"
        p.write_text("hello\n")
        with pytest.raises(ValueError):
            read_table(p)
