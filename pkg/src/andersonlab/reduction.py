"""Cube decomposition, localization centers and box-reduction matching."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .eigensolver import EigenPairs, eigenvalues_symmetric
from .ids import IDSTable
from .lattice import HoppingKernel, LatticeGeometry, build_hamiltonian

AMPLITUDE_FLOOR = 1e-14
MIN_FIT_DISTANCE = 2


@dataclass(frozen=True, eq=False)
class BoxDecomposition:
    geometry: LatticeGeometry
    box_side: int
    buffer: int
    origins: np.ndarray  # (boxes, d)

    @property
    def box_count(self) -> int:
        return len(self.origins)

    @property
    def box_geometry(self) -> LatticeGeometry:
        return LatticeGeometry(self.geometry.dimension, self.box_side)

    def box_sites(self, j: int) -> np.ndarray:
        """Parent site indices of box ``j`` in the box's own lexicographic order."""
        local = self.box_geometry.all_coords
        return self.geometry.index(local + self.origins[j])

    def covered(self) -> np.ndarray:
        mask = np.zeros(self.geometry.site_count, dtype=bool)
        for j in range(self.box_count):
            mask[self.box_sites(j)] = True
        return mask

    @property
    def leftover_fraction(self) -> float:
        return 1.0 - self.box_count * self.box_side**self.geometry.dimension / self.geometry.site_count

    def box_of(self, sites: np.ndarray) -> np.ndarray:
        """Box index containing each parent site, or -1 for the leftover region."""
        coords = self.geometry.coords(np.asarray(sites))
        out = np.full(coords.shape[0], -1)
        for j, o in enumerate(self.origins):
            rel = (coords - o) % self.geometry.side
            inside = np.all(rel < self.box_side, axis=1)
            out[inside] = j
        return out


def decompose(geometry: LatticeGeometry, box_side: int, buffer: int) -> BoxDecomposition:
    """Regular grid of boxes of side ``box_side`` with pitch ``box_side + buffer`` per axis."""
    if box_side < 1 or buffer < 1:
        raise ValueError("box side and buffer must be at least 1")
    pitch = box_side + buffer
    if pitch > geometry.side:
        raise ValueError(f"box side {box_side} plus buffer {buffer} exceeds the lattice side {geometry.side}")
    per_axis = geometry.side // pitch
    starts = [j * pitch for j in range(per_axis)]
    origins = np.array(list(itertools.product(starts, repeat=geometry.dimension)), dtype=int)
    return BoxDecomposition(geometry, box_side, buffer, origins)


def scales(side: int, c1: float = 8.0, c2: float = 3.0) -> tuple[int, int]:
    """Box side and buffer ``(ceil(c1 log L), ceil(c2 log L))``."""
    return math.ceil(c1 * math.log(side)), math.ceil(c2 * math.log(side))


def box_distance(decomp: BoxDecomposition, j: int, k: int) -> int:
    """Exhaustive periodic sup-norm distance between the site sets of two boxes."""
    g = decomp.geometry
    a = g.coords(decomp.box_sites(j))
    b = g.coords(decomp.box_sites(k))
    return int(g.distance(a[:, None, :], b[None, :, :]).min())


# ---------------------------------------------------------------- localization centers


@dataclass(frozen=True, eq=False)
class LocalizationReport:
    eigenvalues: np.ndarray
    columns: np.ndarray  # eigenvector column index for each entry
    centers: np.ndarray
    decay_rates: np.ndarray  # nan where the fit was skipped
    prefactors: np.ndarray
    residuals: np.ndarray
    point_mass: np.ndarray

    def __len__(self):
        return self.eigenvalues.size

    @property
    def median_decay(self) -> float:
        rates = self.decay_rates[np.isfinite(self.decay_rates)]
        return float(np.median(rates)) if rates.size else float("nan")


def fit_decay(vector: np.ndarray, geometry: LatticeGeometry) -> tuple[int, float, float, float, bool]:
    """Center (largest site mass, lowest index on ties) and ``log|v(x)| ~ c - xi dist(x, center)`` fit."""
    amp = np.abs(vector)
    center = int(np.argmax(amp))
    dist = geometry.distance(geometry.all_coords, geometry.coords(center))
    use = (dist >= MIN_FIT_DISTANCE) & (amp > AMPLITUDE_FLOOR)
    if np.count_nonzero(use) < 2 or np.unique(dist[use]).size < 2:
        return center, float("nan"), float("nan"), float("nan"), True
    x = dist[use].astype(float)
    y = np.log(amp[use])
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.linalg.norm(y - design @ coef) / np.sqrt(x.size))
    return center, float(-coef[1]), float(np.exp(coef[0])), resid, False


def localization_centers(pairs: EigenPairs, interval: tuple[float, float], geometry: LatticeGeometry | None = None) -> LocalizationReport:
    geometry = geometry or pairs.spectrum.geometry
    if geometry is None:
        geometry = LatticeGeometry(1, pairs.eigenvectors.shape[0])
    a, b = interval
    vals = pairs.eigenvalues
    cols = np.flatnonzero((vals >= a) & (vals <= b))
    fits = [fit_decay(pairs.eigenvectors[:, c], geometry) for c in cols]
    arr = np.array(fits, dtype=float).reshape(-1, 5)
    return LocalizationReport(
        vals[cols],
        cols,
        arr[:, 0].astype(int),
        arr[:, 1],
        arr[:, 2],
        arr[:, 3],
        arr[:, 4].astype(bool),
    )


# ---------------------------------------------------------------- local spectra and matching


def box_hamiltonian(kernel: HoppingKernel, omega: np.ndarray, decomp: BoxDecomposition, j: int, boundary: str = "periodic") -> np.ndarray:
    sites = decomp.box_sites(j)
    if boundary == "periodic":
        return build_hamiltonian(kernel, decomp.box_geometry, omega[sites]).matrix
    if boundary == "dirichlet":
        # restriction of the parent operator to the box sites
        parent = build_hamiltonian(kernel, decomp.geometry, omega).matrix
        return parent[np.ix_(sites, sites)]
    raise ValueError(f"unknown boundary condition {boundary!r}")


def local_spectra(
    kernel: HoppingKernel,
    omega: np.ndarray,
    decomp: BoxDecomposition,
    interval: tuple[float, float],
    boundary: str = "periodic",
    method: str = "lapack",
) -> list[np.ndarray]:
    """Eigenvalues in ``interval`` of each box Hamiltonian built from the parent's disorder."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (decomp.geometry.site_count,):
        raise ValueError("disorder vector does not match the parent geometry")
    a, b = interval
    parent = build_hamiltonian(kernel, decomp.geometry, omega).matrix if boundary == "dirichlet" else None
    out = []
    for j in range(decomp.box_count):
        if parent is not None:
            sites = decomp.box_sites(j)
            h = parent[np.ix_(sites, sites)]
        else:
            h = box_hamiltonian(kernel, omega, decomp, j, boundary)
        vals = eigenvalues_symmetric(h, method=method).eigenvalues
        out.append(vals[(vals >= a) & (vals <= b)])
    return out


@dataclass(frozen=True, eq=False)
class ReductionReport:
    realization: int | None
    pairs: list = field(default_factory=list)  # (box, global E, local E, error)
    multi_local_boxes: int = 0
    leftover_centers: int = 0
    unmatched: int = 0
    in_box_centers: int = 0
    total: int = 0

    @property
    def errors(self) -> np.ndarray:
        return np.array([p[3] for p in self.pairs], dtype=float)

    @property
    def matched(self) -> int:
        return len(self.pairs)


def match_eigenvalues(
    report: LocalizationReport,
    locals_: Sequence[np.ndarray],
    decomp: BoxDecomposition,
    realization: int | None = None,
) -> ReductionReport:
    """Greedy nearest matching of global eigenvalues to local ones of the box holding their center."""
    if len(locals_) != decomp.box_count:
        raise ValueError("one local spectrum per box is required")
    boxes = decomp.box_of(report.centers) if len(report) else np.empty(0, dtype=int)
    used = [np.zeros(len(v), dtype=bool) for v in locals_]
    pairs = []
    leftover = unmatched = in_box = 0
    for k in np.argsort(report.eigenvalues, kind="stable"):
        e = report.eigenvalues[k]
        j = boxes[k]
        if j < 0:
            leftover += 1
            continue
        in_box += 1
        cand = np.flatnonzero(~used[j])
        if cand.size == 0:
            unmatched += 1
            continue
        best = cand[np.argmin(np.abs(locals_[j][cand] - e))]
        used[j][best] = True
        local = float(locals_[j][best])
        pairs.append((int(j), float(e), local, abs(float(e) - local)))
    return ReductionReport(
        realization,
        pairs,
        multi_local_boxes=sum(1 for v in locals_ if len(v) >= 2),
        leftover_centers=leftover,
        unmatched=unmatched + leftover,
        in_box_centers=in_box,
        total=len(report),
    )


def summarize_reductions(reports: Sequence[ReductionReport]) -> dict:
    errors = np.concatenate([r.errors for r in reports]) if reports else np.empty(0)
    in_box = sum(r.in_box_centers for r in reports)
    matched = sum(r.matched for r in reports)
    total = sum(r.total for r in reports)
    q = np.quantile(errors, [0.1, 0.5, 0.9]) if errors.size else [np.nan] * 3
    return {
        "realizations": len(reports),
        "global_in_window": total,
        "in_box_centers": in_box,
        "matched": matched,
        "matched_fraction": matched / in_box if in_box else float("nan"),
        "leftover_centers": sum(r.leftover_centers for r in reports),
        "unmatched": sum(r.unmatched for r in reports),
        "multi_local_boxes": sum(r.multi_local_boxes for r in reports),
        "error_q10": float(q[0]),
        "error_median": float(q[1]),
        "error_q90": float(q[2]),
    }


# ---------------------------------------------------------------- single local eigenvalue law


@dataclass(frozen=True)
class BernoulliEstimate:
    samples: int
    successes: int
    p_hat: float
    ci_low: float
    ci_high: float
    expected: float
    ratio: float
    positions: np.ndarray = field(default_factory=lambda: np.empty(0))
    increments: list = field(default_factory=list)


def _wilson(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def bernoulli_sample(
    local_values: Sequence[np.ndarray],
    interval: tuple[float, float],
    box_volume: int,
    table: IDSTable,
    grid_pairs: Sequence[tuple[float, float]] = ((0.25, 0.0), (0.5, 0.25), (0.75, 0.5)),
    max_expected: float = 0.1,
    min_samples: int = 10_000,
    z_max: float = 3.0,
) -> BernoulliEstimate:
    """Estimate ``P(X = 1)`` and the conditional law of the single eigenvalue in ``interval``.

    ``local_values`` holds one array per (box, realization) sample; entries outside
    ``interval`` are ignored.
    """
    a, b = interval
    width = b - a
    expected = table.interval_mass(a, b) * box_volume
    if expected > max_expected:
        raise ValueError(f"N(I)|box| = {expected:.3g} exceeds {max_expected}; the single-eigenvalue regime needs it small")
    n = len(local_values)
    if n < min_samples:
        raise ValueError(f"need at least {min_samples} box samples, got {n}")
    positions = []
    for vals in local_values:
        v = np.asarray(vals)
        inside = v[(v >= a) & (v <= b)]
        if inside.size == 1:
            positions.append((inside[0] - a) / width)
    k = len(positions)
    p_hat = k / n
    lo, hi = _wilson(k, n)
    pos = np.sort(np.clip(np.asarray(positions, dtype=float), 0.0, 1.0))
    increments = []
    for x, y in grid_pairs:
        emp = np.count_nonzero((pos > y) & (pos <= x)) / n
        pred = (table.evaluate(a + x * width) - table.evaluate(a + y * width)) * box_volume
        se = math.sqrt(max(pred * (1 - pred), 1e-300) / n)
        increments.append({"x": x, "y": y, "empirical": emp, "predicted": pred, "z": abs(emp - pred) / se, "passed": abs(emp - pred) <= z_max * se})
    ratio = p_hat / expected if expected > 0 else float("nan")
    return BernoulliEstimate(n, k, p_hat, lo, hi, expected, ratio, pos, increments)
