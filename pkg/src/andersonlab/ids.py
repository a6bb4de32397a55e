"""Pooled empirical integrated density of states."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .eigensolver import SpectrumSample

SYNTHETIC = "synthetic"


class ProvenanceError(ValueError):
    pass


def _merge_sources(ranges: Iterable[tuple[int, int, int]]) -> tuple[tuple[int, int, int], ...]:
    """Coalesce ``(seed, first, last)`` realization ranges (inclusive)."""
    out: list[list[int]] = []
    for seed, lo, hi in sorted(ranges):
        if out and out[-1][0] == seed and lo <= out[-1][2] + 1:
            out[-1][2] = max(out[-1][2], hi)
        else:
            out.append([seed, lo, hi])
    return tuple(tuple(r) for r in out)


@dataclass(frozen=True, eq=False)
class IDSTable:
    """Empirical ``N(E)``: cumulative fraction of pooled eigenvalues at sorted knots.

    Between knots the table interpolates linearly; it is 0 below the first knot and
    1 above the last one. ``sources`` lists the ``(seed, first, last)`` realization
    ranges that were pooled, which is what the independence checks look at.
    """

    knots: np.ndarray
    values: np.ndarray
    pooled_sites: int = 0
    realizations: int = 0
    model_id: str = SYNTHETIC
    sources: tuple[tuple[int, int, int], ...] = field(default=())

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.shape != v.shape or k.ndim != 1:
            raise ValueError("knots and values must be 1-d arrays of equal length")
        if k.size and (np.any(np.diff(k) <= 0) or np.any(np.diff(v) < 0)):
            raise ValueError("knots must be strictly increasing and values nondecreasing")
        if v.size and (v[0] < 0 or v[-1] > 1):
            raise ValueError("values must lie in [0, 1]")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    @classmethod
    def empty(cls, model_id: str = SYNTHETIC) -> "IDSTable":
        return cls(np.empty(0), np.empty(0), 0, 0, model_id)

    @classmethod
    def from_spectra(cls, samples: Sequence[SpectrumSample], model_id: str | None = None) -> "IDSTable":
        """Pool many samples in one pass (what the harness uses)."""
        if not samples:
            raise ValueError("no samples to pool")
        if model_id is None:
            model_id = samples[0].provenance.model_id or SYNTHETIC
        for s in samples:
            if (s.provenance.model_id or SYNTHETIC) != model_id:
                raise ProvenanceError("samples come from different models")
        energies = np.concatenate([np.asarray(s.eigenvalues, dtype=float) for s in samples])
        sites = sum(s.volume for s in samples)
        if energies.size != sites:
            raise ValueError("each sample must carry one eigenvalue per site")
        sources = _merge_sources(
            (s.provenance.seed, s.provenance.realization, s.provenance.realization)
            for s in samples
            if s.provenance.seed is not None
        )
        return cls._from_counts(energies, np.ones(energies.size, dtype=np.int64), sites, len(samples), model_id, sources)

    @classmethod
    def _from_counts(cls, energies, counts, sites, realizations, model_id, sources) -> "IDSTable":
        knots, inverse = np.unique(energies, return_inverse=True)
        per_knot = np.bincount(inverse, weights=counts, minlength=knots.size).astype(np.int64)
        values = np.cumsum(per_knot) / sites
        return cls(knots, values, int(sites), int(realizations), model_id, sources)

    @property
    def cumulative_counts(self) -> np.ndarray:
        return np.rint(self.values * self.pooled_sites).astype(np.int64)

    @property
    def is_empty(self) -> bool:
        return self.knots.size == 0

    def merge(self, other: "IDSTable") -> "IDSTable":
        """Combine two pooled tables; associative and order independent."""
        if self.is_empty:
            return other
        if other.is_empty:
            return self
        if self.model_id != other.model_id:
            raise ProvenanceError(f"model mismatch: {self.model_id} vs {other.model_id}")
        if self.pooled_sites <= 0 or other.pooled_sites <= 0:
            raise ValueError("only pooled tables (with site counts) can be merged")
        energies = np.concatenate([self.knots, other.knots])
        counts = np.concatenate([np.diff(self.cumulative_counts, prepend=0), np.diff(other.cumulative_counts, prepend=0)])
        return IDSTable._from_counts(
            energies,
            counts,
            self.pooled_sites + other.pooled_sites,
            self.realizations + other.realizations,
            self.model_id,
            _merge_sources(self.sources + other.sources),
        )

    def covers(self, seed: int | None, realization: int | None) -> bool:
        if seed is None or realization is None:
            return False
        return any(s == seed and lo <= realization <= hi for s, lo, hi in self.sources)

    def evaluate(self, energy):
        if self.is_empty:
            raise ValueError("empty IDS table")
        out = np.interp(energy, self.knots, self.values, left=0.0, right=1.0)
        return float(out) if np.ndim(out) == 0 else out

    def interval_mass(self, a: float, b: float) -> float:
        if a > b:
            raise ValueError(f"inverted interval [{a}, {b}]")
        return self.evaluate(b) - self.evaluate(a)

    def quantile(self, q):
        """Leftmost energy at which the table reaches ``q``."""
        if self.is_empty:
            raise ValueError("empty IDS table")
        qa = np.asarray(q, dtype=float)
        if np.any((qa < 0) | (qa > 1)):
            raise ValueError("quantile level must lie in [0, 1]")
        v, k = self.values, self.knots
        # first knot whose value reaches q, then interpolate back into the preceding segment
        j = np.searchsorted(v, qa, side="left")
        j = np.clip(j, 0, v.size - 1)
        prev = np.maximum(j - 1, 0)
        dv = v[j] - v[prev]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(dv > 0, (qa - v[prev]) / dv, 1.0)
        out = np.where(j == 0, k[0], k[prev] + frac * (k[j] - k[prev]))
        # never step past the knot itself (guards rounding in the interpolation)
        out = np.minimum(out, k[j])
        return float(out) if np.ndim(out) == 0 else out

    def with_sources(self, sources) -> "IDSTable":
        return replace(self, sources=_merge_sources(sources))


def accumulate(table: IDSTable, sample: SpectrumSample) -> IDSTable:
    return table.merge(IDSTable.from_spectra([sample], model_id=table.model_id if not table.is_empty else None))


def merge_tables(tables: Iterable[IDSTable]) -> IDSTable:
    out = None
    for t in tables:
        out = t if out is None else out.merge(t)
    if out is None:
        raise ValueError("nothing to merge")
    return out


def evaluate(table: IDSTable, energy):
    return table.evaluate(energy)


def interval_mass(table: IDSTable, interval: tuple[float, float]) -> float:
    return table.interval_mass(*interval)


def quantile(table: IDSTable, q):
    return table.quantile(q)


@dataclass(frozen=True)
class EdgeAnchor:
    """Spectral edge anchor; ``energy`` defaults to the table's extreme knot."""

    side: str = "lower"
    energy: float | None = None

    def __post_init__(self):
        if self.side not in ("lower", "upper"):
            raise ValueError("edge side must be 'lower' or 'upper'")


def interval_for_mass(table: IDSTable, anchor, mass: float, volume: int) -> tuple[float, float]:
    """Interval carrying ``mass`` expected eigenvalues in a box of ``volume`` sites.

    ``anchor`` is an interior energy (interval centred in IDS measure) or an
    :class:`EdgeAnchor`.
    """
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    frac = mass / volume
    if frac > 1:
        raise ValueError("requested mass exceeds the total mass of the spectrum")
    if isinstance(anchor, EdgeAnchor):
        if anchor.side == "lower":
            edge = table.knots[0] if anchor.energy is None else anchor.energy
            base = table.evaluate(edge)
            if base + frac > 1:
                raise ValueError("requested mass exceeds the available mass above the edge")
            return float(edge), float(max(edge, table.quantile(base + frac)))
        edge = table.knots[-1] if anchor.energy is None else anchor.energy
        base = table.evaluate(edge)
        if base - frac < 0:
            raise ValueError("requested mass exceeds the available mass below the edge")
        return float(min(edge, table.quantile(base - frac))), float(edge)
    e0 = float(anchor)
    if frac == 0:
        return e0, e0
    centre = table.evaluate(e0)
    lo, hi = centre - frac / 2, centre + frac / 2
    if lo < 0:
        raise ValueError("requested mass exceeds the available mass below the anchor")
    if hi > 1:
        raise ValueError("requested mass exceeds the available mass above the anchor")
    return float(table.quantile(lo)), float(table.quantile(hi))


@dataclass(frozen=True)
class LifshitzFit:
    exponent: float
    intercept: float
    residual_norm: float
    offsets_used: np.ndarray
    offsets_skipped: np.ndarray


def geometric_offsets(a0: float, count: int) -> np.ndarray:
    return a0 * 2.0 ** -np.arange(count)


def lifshitz_exponent_fit(table: IDSTable, edge: float, offsets: Sequence[float], side: str = "lower") -> LifshitzFit:
    """Fit ``log(-log N(E_edge + a)) = c - rho log a`` and return ``rho``.

    For an upper edge the mass above ``edge - a`` is used instead.
    """
    a = np.asarray(offsets, dtype=float)
    if np.any(a <= 0):
        raise ValueError("offsets must be positive")
    if side == "lower":
        n = np.asarray(table.evaluate(edge + a), dtype=float)
    else:
        n = 1.0 - np.asarray(table.evaluate(edge - a), dtype=float)
    usable = (n > 0) & (n < 1)
    if usable.sum() < 3:
        raise ValueError(f"only {int(usable.sum())} offsets carry mass; need at least 3")
    x = np.log(a[usable])
    y = np.log(-np.log(n[usable]))
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return LifshitzFit(float(-coef[1]), float(coef[0]), float(np.linalg.norm(resid)), a[usable], a[~usable])


def write_table(table: IDSTable, path) -> Path:
    """Write the table as tab-separated text; floats use ``repr`` so reading back is exact."""
    path = Path(path)
    sources = ",".join(f"{s}:{lo}-{hi}" for s, lo, hi in table.sources)
    lines = [
        "# ids-table v1",
        f"# model_id\t{table.model_id}",
        f"# pooled_sites\t{table.pooled_sites}",
        f"# realizations\t{table.realizations}",
        f"# sources\t{sources}",
        "# energy\tcumulative_fraction",
    ]
    lines.extend(f"{e!r}\t{v!r}" for e, v in zip(table.knots.tolist(), table.values.tolist()))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path) -> IDSTable:
    header: dict[str, str] = {}
    energies: list[float] = []
    values: list[float] = []
    with open(path) as fh:
        first = fh.readline().strip()
        if first != "# ids-table v1":
            raise ValueError(f"{path}: not an IDS table file")
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("\t")
                header[key] = val
                continue
            if not line:
                continue
            e, v = line.split("\t")
            energies.append(float(e))
            values.append(float(v))
    sources = []
    if header.get("sources"):
        for item in header["sources"].split(","):
            seed, _, rng = item.partition(":")
            lo, _, hi = rng.partition("-")
            sources.append((int(seed), int(lo), int(hi)))
    return IDSTable(
        np.array(energies),
        np.array(values),
        int(header.get("pooled_sites", 0)),
        int(header.get("realizations", 0)),
        header.get("model_id", SYNTHETIC),
        tuple(sources),
    )
