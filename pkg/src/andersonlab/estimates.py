"""Monte Carlo checks of Wegner/Minami-type moment bounds."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .eigensolver import SpectrumSample
from .ids import IDSTable


@dataclass(frozen=True)
class MomentReport:
    quantity: str
    estimate: float
    standard_error: float
    bound: float
    passed: bool = field(init=False)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.standard_error < 0:
            raise ValueError("standard error must be nonnegative")
        object.__setattr__(self, "passed", bool(self.estimate + 2 * self.standard_error <= self.bound))

    def as_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "estimate": self.estimate,
            "standard_error": self.standard_error,
            "bound": self.bound,
            "passed": self.passed,
            **self.details,
        }


def interval_counts(samples: Sequence[SpectrumSample], interval: tuple[float, float]) -> np.ndarray:
    a, b = interval
    if a > b:
        raise ValueError("inverted interval")
    if not samples:
        raise ValueError("empty batch")
    return np.array([np.count_nonzero((s.eigenvalues >= a) & (s.eigenvalues <= b)) for s in samples], dtype=np.int64)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def wegner_estimate(
    samples: Sequence[SpectrumSample],
    interval: tuple[float, float],
    table: IDSTable,
    density_sup: float,
    wegner_constant: float | None = None,
) -> tuple[MomentReport, MomentReport]:
    """Classical ``C |I| |V|`` and IDS-weighted ``2 N(I) |V|`` bounds on the mean count."""
    counts = interval_counts(samples, interval)
    volume = samples[0].volume
    mean, se = _mean_se(counts)
    length = interval[1] - interval[0]
    c = density_sup if wegner_constant is None else wegner_constant
    classical_bound = c * length * volume
    classical = MomentReport(
        "W",
        mean,
        se,
        classical_bound,
        {"saturation_z": abs(mean - classical_bound) / se if se > 0 else (0.0 if mean == classical_bound else np.inf)},
    )
    target = table.interval_mass(*interval) * volume
    enhanced = MomentReport(
        "W-enhanced",
        mean,
        se,
        2 * target,
        {
            "ids_mass_times_volume": target,
            "ratio": mean / target if target > 0 else np.nan,
            "wcontrol_discrepancy": abs(mean - target),
        },
    )
    return classical, enhanced


def minami_estimate(
    samples: Sequence[SpectrumSample],
    interval: tuple[float, float],
    table: IDSTable,
    density_sup: float,
    minami_constant: float | None = None,
) -> tuple[MomentReport, MomentReport]:
    """``E[k(k-1)]`` against ``C (|I||V|)^2`` and ``2 N(I) |I| |V|^2``."""
    k = interval_counts(samples, interval)
    volume = samples[0].volume
    mean, se = _mean_se(k * (k - 1))
    length = interval[1] - interval[0]
    c = np.pi**2 * density_sup**2 if minami_constant is None else minami_constant
    classical = MomentReport("M", mean, se, c * (length * volume) ** 2)
    enhanced = MomentReport("M-enhanced", mean, se, 2 * table.interval_mass(*interval) * length * volume**2)
    return classical, enhanced


def _check_nested(intervals: Sequence[tuple[float, float]]):
    if len(intervals) < 2:
        raise ValueError("need at least two nested intervals")
    for (a1, b1), (a2, b2) in zip(intervals, intervals[1:]):
        if not (a2 <= a1 <= b1 <= b2):
            raise ValueError(f"intervals not nested: [{a1}, {b1}] is not inside [{a2}, {b2}]")


def factorial_product(counts: np.ndarray) -> np.ndarray:
    """Row-wise ``prod_k (c_k - k + 1)`` for a ``(realizations, n)`` count array; negatives kept."""
    counts = np.asarray(counts, dtype=np.int64)
    shifts = np.arange(counts.shape[1])
    return np.prod(counts - shifts, axis=1)


def high_order_moment(
    samples: Sequence[SpectrumSample],
    intervals: Sequence[tuple[float, float]],
    table: IDSTable,
    density_sup: float,
) -> MomentReport:
    _check_nested(intervals)
    counts = np.column_stack([interval_counts(samples, iv) for iv in intervals])
    volume = samples[0].volume
    mean, se = _mean_se(factorial_product(counts))
    lengths = [b - a for a, b in intervals]
    bound = 2 * np.prod([density_sup * lk * volume for lk in lengths[:-1]]) * table.interval_mass(*intervals[-1]) * volume
    return MomentReport(f"HOM({len(intervals)})", mean, se, float(bound))


@dataclass(frozen=True)
class WcontrolRow:
    side: int
    volume: int
    realizations: int
    mean_count: float
    standard_error: float
    target: float
    target_error: float
    discrepancy: float

    @property
    def z(self) -> float:
        total = np.hypot(self.standard_error, self.target_error)
        return self.discrepancy / total if total > 0 else (0.0 if self.discrepancy == 0 else np.inf)


def wcontrol_rows(
    counts_by_side: dict[int, np.ndarray],
    dimension: int,
    reference_mass: float,
    reference_sites: int | None = None,
) -> list[WcontrolRow]:
    """Discrepancy ``|mean count - N(I)|V||`` per box side.

    ``reference_sites`` (pooled size of the reference table) adds its own sampling
    error to the comparison; omit it for an exact reference.
    """
    if len(counts_by_side) < 3:
        raise ValueError("need at least three box sides")
    rows = []
    for side in sorted(counts_by_side):
        c = np.asarray(counts_by_side[side])
        volume = side**dimension
        mean, se = _mean_se(c)
        target = reference_mass * volume
        ref_err = 0.0
        if reference_sites:
            ref_err = volume * np.sqrt(reference_mass * (1 - reference_mass) / reference_sites)
        rows.append(WcontrolRow(side, volume, c.size, mean, se, target, float(ref_err), abs(mean - target)))
    return rows


def wcontrol_summary(rows: Sequence[WcontrolRow], z_max: float = 2.0) -> dict:
    z = np.array([r.z for r in rows])
    resolved = [r for r in rows if r.z > z_max]
    growing = any(b.discrepancy > a.discrepancy for a, b in zip(resolved, resolved[1:]))
    return {
        "all_within_2se": bool(np.all(z <= z_max)),
        "nongrowing": not growing,
        "max_z": float(z.max()),
    }
