"""Unfolded local level statistics, spacings and counting-function tests.

Finite-sample thresholds come from simulating the limiting law (Poisson counts,
exponential spacings) at the same sample size and taking a high percentile of
the simulated statistic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats

from .eigensolver import SpectrumSample
from .ids import IDSTable, ProvenanceError, SYNTHETIC

NULL_QUANTILE = 0.99
NULL_REPS = 2000
NULL_SEED = 20240611


@dataclass(frozen=True)
class TestReport:
    name: str
    statistic: float
    sample_size: int
    threshold: float
    passed: bool = field(init=False)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.statistic >= 0:
            raise ValueError("test statistic must be nonnegative")
        object.__setattr__(self, "passed", bool(self.statistic <= self.threshold))

    def as_dict(self) -> dict:
        out = {
            "test": self.name,
            "statistic": self.statistic,
            "sample_size": self.sample_size,
            "threshold": self.threshold,
            "passed": self.passed,
        }
        out.update(self.details)
        return out


@dataclass(frozen=True, eq=False)
class UnfoldedSample:
    anchor: float
    half_width: float
    values: np.ndarray
    realization: int | None = None
    seed: int | None = None


@dataclass(frozen=True, eq=False)
class PointProcessBatch:
    samples: tuple[UnfoldedSample, ...]
    anchor: float
    half_width: float

    def __len__(self):
        return len(self.samples)

    def counts(self, lo: float, hi: float) -> np.ndarray:
        """Atoms per realization in the half-open window ``[lo, hi)``."""
        return np.array([np.count_nonzero((s.values >= lo) & (s.values < hi)) for s in self.samples])

    def intensity(self) -> float:
        atoms = sum(s.values.size for s in self.samples)
        return atoms / (len(self.samples) * 2 * self.half_width)

    def merge(self, other: "PointProcessBatch") -> "PointProcessBatch":
        return collect_point_process(list(self.samples) + list(other.samples))


def _check_independent(sample: SpectrumSample, table: IDSTable):
    prov = sample.provenance
    if prov.model_id and table.model_id != SYNTHETIC and prov.model_id != table.model_id:
        raise ProvenanceError(f"sample model {prov.model_id} differs from table model {table.model_id}")
    if table.covers(prov.seed, prov.realization):
        raise ProvenanceError(
            f"realization {prov.realization} (seed {prov.seed}) was pooled into the IDS table; "
            "unfold against a table built from disjoint realizations"
        )


def unfold_values(sample: SpectrumSample, table: IDSTable, anchor: float) -> np.ndarray:
    return sample.volume * (table.evaluate(sample.eigenvalues) - table.evaluate(anchor))


def unfold(sample: SpectrumSample, table: IDSTable, anchor: float, half_width: float, edge: bool = False) -> UnfoldedSample:
    """Unfolded eigenvalues ``|V| (N(E_j) - N(E_0))`` lying in ``[-s, s]``.

    ``edge=True`` admits anchors at or beyond the table's extreme knots (spectral edges).
    """
    if half_width <= 0:
        raise ValueError("window half-width must be positive")
    _check_independent(sample, table)
    if not edge and not (table.knots[0] <= anchor <= table.knots[-1]):
        raise ValueError(f"anchor {anchor} outside the table support [{table.knots[0]}, {table.knots[-1]}]")
    xi = unfold_values(sample, table, anchor)
    keep = np.abs(xi) <= half_width
    vals = xi[keep]
    if np.any(np.diff(vals) < 0):
        raise AssertionError("unfolding broke eigenvalue order")
    prov = sample.provenance
    return UnfoldedSample(anchor, half_width, vals, prov.realization, prov.seed)


def collect_point_process(samples: Sequence[UnfoldedSample]) -> PointProcessBatch:
    if not samples:
        raise ValueError("empty batch")
    first = samples[0]
    for s in samples:
        if s.anchor != first.anchor or s.half_width != first.half_width:
            raise ValueError("samples use different anchors or windows")
    keys = [(s.seed, s.realization) for s in samples if s.realization is not None]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate realization in batch")
    return PointProcessBatch(tuple(samples), first.anchor, first.half_width)


def rescaled_uniform_process(sample: SpectrumSample, table: IDSTable, interval: tuple[float, float], t: float) -> np.ndarray:
    """Atoms ``N(J)|V| (N_J(E_n) - t)`` for eigenvalues ``E_n`` in ``J = [a, b]``."""
    a, b = interval
    mass = table.interval_mass(a, b)
    if mass <= 0:
        raise ValueError("interval carries no IDS mass")
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    e = np.asarray(sample.eigenvalues)
    inside = e[(e >= a) & (e <= b)]
    nj = (table.evaluate(inside) - table.evaluate(a)) / mass
    return mass * sample.volume * (nj - t)


def rescaled_uniform_test(
    samples: Sequence[SpectrumSample],
    table: IDSTable,
    interval: tuple[float, float],
    window: tuple[float, float],
    draws_per_sample: int,
    seed: int,
) -> TestReport:
    """Counts of the rescaled process in ``window`` under uniform ``t``, tested against Poisson."""
    rng = np.random.default_rng(seed)
    counts = []
    lo, hi = window
    for s in samples:
        _check_independent(s, table)
        for t in rng.random(draws_per_sample):
            atoms = rescaled_uniform_process(s, table, interval, t)
            counts.append(np.count_nonzero((atoms >= lo) & (atoms < hi)))
    return poisson_counts_report("rescaled-uniform-poisson", np.asarray(counts), hi - lo)


# ---------------------------------------------------------------- spacings


@dataclass(frozen=True, eq=False)
class SpacingsReport:
    spacings: np.ndarray
    normalizer: int
    per_realization: tuple[int, ...] = ()

    def __post_init__(self):
        if np.any(self.spacings < 0):
            raise ValueError("negative spacing")


def spacings(sample: SpectrumSample, table: IDSTable, interval: tuple[float, float]) -> SpacingsReport:
    """Unfolded spacings ``|V| (N(E_{j+1}) - N(E_j))`` for eigenvalues ``E_j`` in the interval.

    The spacing that starts at the last in-window eigenvalue runs to the next
    eigenvalue even when that one lies outside, so that ``DLS(0) = 1``.
    """
    a, b = interval
    if not a < b:
        raise ValueError("empty interval")
    _check_independent(sample, table)
    e = np.asarray(sample.eigenvalues)
    idx = np.flatnonzero((e >= a) & (e <= b))
    unf = sample.volume * table.evaluate(e)
    nxt = idx[idx + 1 < e.size]
    gaps = np.maximum(unf[nxt + 1] - unf[nxt], 0.0)
    return SpacingsReport(gaps, int(idx.size), (int(idx.size),))


def pool_spacings(reports: Sequence[SpacingsReport]) -> SpacingsReport:
    if not reports:
        raise ValueError("no spacing reports")
    return SpacingsReport(
        np.concatenate([r.spacings for r in reports]),
        sum(r.normalizer for r in reports),
        tuple(c for r in reports for c in r.per_realization),
    )


@dataclass(frozen=True, eq=False)
class DLSCurve:
    grid: np.ndarray
    survival: np.ndarray
    sup_distance: float
    argmax: float


def _survival_sup_distance(values: np.ndarray, normalizer: int, target) -> tuple[float, float]:
    """sup over x >= 0 of |#{v >= x}/normalizer - target(x)| for a decreasing target."""
    v = np.sort(values)
    n = normalizer
    ge = (v.size - np.searchsorted(v, v, side="left")) / n  # value at x = v_i
    gt = (v.size - np.searchsorted(v, v, side="right")) / n  # value just after v_i
    tv = target(v)
    cand = np.concatenate([[abs(v.size / n - target(0.0))], np.abs(ge - tv), np.abs(gt - tv)])
    where = np.concatenate([[0.0], v, v])
    k = int(np.argmax(cand))
    return float(cand[k]), float(where[k])


def dls(report: SpacingsReport) -> DLSCurve:
    """Empirical spacing survival ``DLS(x)`` and its sup distance to ``exp(-x)``."""
    if report.normalizer < 1:
        raise ValueError("empty spacings report")
    grid = np.sort(report.spacings)
    survival = (grid.size - np.searchsorted(grid, grid, side="left")) / report.normalizer
    dist, where = _survival_sup_distance(report.spacings, report.normalizer, lambda x: np.exp(-np.asarray(x)))
    return DLSCurve(grid, survival, dist, where)


# ---------------------------------------------------------------- null calibration


def tv_to_poisson(counts: np.ndarray, mean: float) -> float:
    counts = np.asarray(counts, dtype=np.int64)
    kmax = int(max(counts.max(initial=0), stats.poisson.ppf(1 - 1e-15, mean))) + 1
    emp = np.bincount(counts, minlength=kmax + 1)[: kmax + 1] / counts.size
    pmf = stats.poisson.pmf(np.arange(kmax + 1), mean)
    tail = max(0.0, 1.0 - pmf.sum())
    return float(0.5 * (np.abs(emp - pmf).sum() + tail))


@lru_cache(maxsize=64)
def null_tv_threshold(mean: float, n: int, reps: int = NULL_REPS, q: float = NULL_QUANTILE, seed: int = NULL_SEED) -> float:
    rng = np.random.default_rng([seed, n, int(round(mean * 1e6))])
    sims = [tv_to_poisson(rng.poisson(mean, n), mean) for _ in range(reps)]
    return float(np.quantile(sims, q))


@lru_cache(maxsize=64)
def null_exp_sup_threshold(n: int, reps: int = NULL_REPS, q: float = NULL_QUANTILE, seed: int = NULL_SEED) -> float:
    rng = np.random.default_rng([seed, n, 1])
    sims = []
    for _ in range(reps):
        x = rng.exponential(size=n)
        sims.append(_survival_sup_distance(x, n, lambda t: np.exp(-np.asarray(t)))[0])
    return float(np.quantile(sims, q))


@lru_cache(maxsize=64)
def null_correlation_threshold(mean1: float, mean2: float, n: int, reps: int = NULL_REPS, q: float = NULL_QUANTILE, seed: int = NULL_SEED) -> float:
    rng = np.random.default_rng([seed, n, 2])
    sims = [abs(np.corrcoef(rng.poisson(mean1, n), rng.poisson(mean2, n))[0, 1]) for _ in range(reps)]
    return float(np.quantile(sims, q))


def poisson_counts_report(name: str, counts: np.ndarray, mean: float, threshold: float | None = None) -> TestReport:
    counts = np.asarray(counts, dtype=np.int64)
    if threshold is None:
        threshold = null_tv_threshold(float(mean), int(counts.size))
    tv = tv_to_poisson(counts, mean)
    # chi-square on bins pooled until each expects at least 5 draws
    kmax = int(max(counts.max(initial=0), stats.poisson.ppf(1 - 1e-12, mean)))
    obs = np.bincount(counts, minlength=kmax + 1).astype(float)
    exp = stats.poisson.pmf(np.arange(kmax + 1), mean) * counts.size
    exp[-1] += counts.size - exp.sum()
    bins_o, bins_e, acc_o, acc_e = [], [], 0.0, 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= 5:
            bins_o.append(acc_o)
            bins_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and bins_e:
        bins_o[-1] += acc_o
        bins_e[-1] += acc_e
    chi2 = float(np.sum((np.array(bins_o) - np.array(bins_e)) ** 2 / np.array(bins_e))) if bins_e else 0.0
    dof = max(len(bins_e) - 1, 1)
    return TestReport(
        name,
        tv,
        int(counts.size),
        float(threshold),
        {
            "expected_mean": float(mean),
            "count_mean": float(counts.mean()),
            "count_variance": float(counts.var()),
            "chi2": chi2,
            "chi2_dof": dof,
            "chi2_pvalue": float(stats.chi2.sf(chi2, dof)),
        },
    )


def poisson_count_test(
    batch: PointProcessBatch,
    subwindow: tuple[float, float],
    threshold: float | None = None,
    min_realizations: int = 500,
) -> TestReport:
    """Total-variation distance of per-realization counts in ``subwindow`` to Poisson(length)."""
    lo, hi = subwindow
    if not (-batch.half_width <= lo < hi <= batch.half_width):
        raise ValueError("subwindow must lie inside the batch window")
    if len(batch) < min_realizations:
        raise ValueError(f"need at least {min_realizations} realizations, got {len(batch)}")
    return poisson_counts_report("poisson-count", batch.counts(lo, hi), hi - lo, threshold)


def increment_correlation_test(batch: PointProcessBatch, first: tuple[float, float], second: tuple[float, float]) -> TestReport:
    c1 = batch.counts(*first)
    c2 = batch.counts(*second)
    corr = 0.0 if c1.std() == 0 or c2.std() == 0 else float(np.corrcoef(c1, c2)[0, 1])
    thr = null_correlation_threshold(first[1] - first[0], second[1] - second[0], len(batch))
    return TestReport("increment-correlation", abs(corr), len(batch), thr, {"correlation": corr})


def intensity_check(batch: PointProcessBatch, tolerance: float = 0.05) -> TestReport:
    rate = batch.intensity()
    return TestReport("intensity", abs(rate - 1.0), len(batch), tolerance, {"intensity": rate})


def half_line_check(batch: PointProcessBatch, side: str = "lower", margin: float = 0.05, threshold: float = 0.01) -> TestReport:
    """Fraction of atoms on the wrong side of an edge anchor, beyond ``margin``."""
    atoms = np.concatenate([s.values for s in batch.samples]) if len(batch) else np.empty(0)
    if side == "lower":
        bad = np.count_nonzero(atoms < -margin)
    elif side == "upper":
        bad = np.count_nonzero(atoms > margin)
    else:
        raise ValueError("side must be 'lower' or 'upper'")
    frac = bad / atoms.size if atoms.size else 0.0
    return TestReport("half-line", float(frac), int(atoms.size), threshold, {"margin": margin, "side": side})


def spacing_test(report: SpacingsReport, threshold: float | None = None) -> TestReport:
    curve = dls(report)
    if threshold is None:
        threshold = null_exp_sup_threshold(int(report.normalizer))
    return TestReport(
        "dls-exponential",
        curve.sup_distance,
        int(report.spacings.size),
        float(threshold),
        {"normalizer": report.normalizer, "argmax": curve.argmax},
    )


# ---------------------------------------------------------------- counting function


@dataclass(frozen=True, eq=False)
class CountReport:
    counts: np.ndarray
    target_mean: float

    def __post_init__(self):
        if self.target_mean <= 0:
            raise ValueError("target mean must be positive")
        if np.any(np.asarray(self.counts) < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def normalized(self) -> np.ndarray:
        return (np.asarray(self.counts, dtype=float) - self.target_mean) / np.sqrt(self.target_mean)

    def moments(self) -> dict:
        x = self.normalized
        return {
            "mean": float(x.mean()),
            "variance": float(x.var()),
            "skewness": float(stats.skew(x)) if x.std() > 0 else 0.0,
            "excess_kurtosis": float(stats.kurtosis(x)) if x.std() > 0 else 0.0,
        }


def count_report(samples: Sequence[SpectrumSample], table: IDSTable, interval: tuple[float, float]) -> CountReport:
    a, b = interval
    counts = []
    for s in samples:
        _check_independent(s, table)
        e = s.eigenvalues
        counts.append(int(np.count_nonzero((e >= a) & (e <= b))))
    volume = samples[0].volume
    return CountReport(np.asarray(counts), table.interval_mass(a, b) * volume)


def ks_to_normal(x: np.ndarray) -> float:
    """Two-sided KS distance to the standard normal, exact for samples with ties."""
    v = np.sort(np.asarray(x, dtype=float))
    n = v.size
    uniq = np.unique(v)
    cdf_at = np.searchsorted(v, uniq, side="right") / n
    cdf_before = np.searchsorted(v, uniq, side="left") / n
    phi = stats.norm.cdf(uniq)
    return float(max(np.max(np.abs(cdf_at - phi)), np.max(np.abs(cdf_before - phi))))


def clt_report(
    counts: CountReport,
    ks_threshold: float = 0.05,
    skew_threshold: float = 0.15,
    min_realizations: int = 1000,
    min_mean: float = 50.0,
) -> list[TestReport]:
    """KS distance of the normalized counts to N(0,1), plus a skewness check."""
    if len(counts.counts) < min_realizations:
        raise ValueError(f"need at least {min_realizations} realizations, got {len(counts.counts)}")
    if counts.target_mean < min_mean:
        raise ValueError(f"expected count {counts.target_mean:.1f} below {min_mean}; CLT regime needs a larger window")
    ks = ks_to_normal(counts.normalized)
    mom = counts.moments()
    n = len(counts.counts)
    return [
        TestReport("clt-normal-ks", ks, n, ks_threshold, mom),
        TestReport("clt-skewness", abs(mom["skewness"]), n, skew_threshold, mom),
    ]


def deviation_report(counts: CountReport, gammas: Sequence[float]) -> dict:
    """Fraction of realizations with ``|count - mean| >= mean**gamma`` for each ``gamma``."""
    g = np.asarray(gammas, dtype=float)
    if g.size == 0:
        raise ValueError("empty exponent grid")
    dev = np.abs(np.asarray(counts.counts, dtype=float) - counts.target_mean)
    fractions = np.array([np.mean(dev >= counts.target_mean ** gamma) for gamma in g])
    return {
        "gamma": g,
        "threshold": counts.target_mean ** g,
        "fraction": fractions,
        "monotone": bool(np.all(np.diff(fractions) <= 0)),
    }
