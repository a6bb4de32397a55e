"""Experiment orchestration: seeded phases, worker pool, persisted reports and manifest."""
from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, ModelConfig
from .eigensolver import SpectrumSample, count_below, eigenpairs_symmetric, eigenvalues_symmetric
from .estimates import high_order_moment, minami_estimate, wcontrol_rows, wcontrol_summary, wegner_estimate
from .ids import EdgeAnchor, IDSTable, ProvenanceError, geometric_offsets, interval_for_mass, lifshitz_exponent_fit, read_table, write_table
from .lattice import LatticeGeometry, Provenance, almost_sure_spectrum, sample_disorder, sparse_hamiltonian
from .levelstats import (
    CountReport,
    TestReport,
    clt_report,
    collect_point_process,
    deviation_report,
    half_line_check,
    increment_correlation_test,
    intensity_check,
    poisson_count_test,
    pool_spacings,
    spacing_test,
    spacings,
    unfold,
)
from .reduction import (
    bernoulli_sample,
    decompose,
    local_spectra,
    localization_centers,
    match_eigenvalues,
    scales,
    summarize_reductions,
)
from .reports import sha256, write_batch, write_columns, write_reports

PHASES = ("ids-build", "bulk-stats", "edge-stats", "spacings", "clt", "wegner-minami", "reduce")
IDS_FILE = "ids_table.tsv"
MANIFEST_FILE = "manifest.txt"
CHUNK = 64


class MissingTableError(FileNotFoundError):
    pass


# ------------------------------------------------------------------ workers


def _chunk_spectra(model: ModelConfig, side: int, seed: int, realizations: list[int], solver: str) -> list[np.ndarray]:
    m = model.build()
    g = LatticeGeometry(model.dimension, side)
    return [eigenvalues_symmetric(m.realize(g, seed, r), method=solver).eigenvalues for r in realizations]


def _chunk_counts(model: ModelConfig, side: int, seed: int, realizations: list[int], energies: tuple[float, float]) -> list[int]:
    m = model.build()
    g = LatticeGeometry(model.dimension, side)
    out = []
    for r in realizations:
        # sparse assembly keeps large tori affordable; counts come from banded inertia
        h = sparse_hamiltonian(m.kernel, g, sample_disorder(m.disorder, g, seed, r))
        out.append(count_below(h, energies[1]) - count_below(h, np.nextafter(energies[0], -np.inf)))
    return out


def _chunk_reduction(model: ModelConfig, side: int, seed: int, realizations: list[int], interval, boxes, boundary: str):
    m = model.build()
    g = LatticeGeometry(model.dimension, side)
    out = []
    for r in realizations:
        h = m.realize(g, seed, r)
        pairs = eigenpairs_symmetric(h, method="lapack")
        rep = localization_centers(pairs, interval, g)
        per_buffer = []
        for box_side, buffer in boxes:
            d = decompose(g, box_side, buffer)
            loc = local_spectra(m.kernel, h.disorder, d, interval, boundary)
            per_buffer.append(match_eigenvalues(rep, loc, d, r))
        out.append((rep.median_decay, per_buffer))
    return out


def _chunk_boxes(model: ModelConfig, side: int, seed: int, realizations: list[int], box_side: int, buffer: int, interval, boundary: str):
    m = model.build()
    g = LatticeGeometry(model.dimension, side)
    d = decompose(g, box_side, buffer)
    out = []
    for r in realizations:
        omega = sample_disorder(m.disorder, g, seed, r)
        out.extend(local_spectra(m.kernel, omega, d, interval, boundary))
    return out


class Runner:
    """Ordered map over realization chunks; results never depend on the worker count."""

    def __init__(self, threads: int):
        self.threads = threads
        self.pool = ProcessPoolExecutor(threads) if threads > 1 else None

    def map(self, fn, realizations, *args) -> list:
        reals = list(realizations)
        chunks = [reals[i : i + CHUNK] for i in range(0, len(reals), CHUNK)]
        if self.pool is None:
            parts = [fn(*args[:3], c, *args[3:]) for c in chunks]
        else:
            futures = [self.pool.submit(fn, *args[:3], c, *args[3:]) for c in chunks]
            parts = [f.result() for f in futures]
        return [x for p in parts for x in p]

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


# ------------------------------------------------------------------ manifest


@dataclass
class RunManifest:
    config_hash: str
    version: str
    timings: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # name -> sha256
    reports: list = field(default_factory=list)  # (name, passed)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok in self.reports)

    def write(self, directory: Path) -> Path:
        lines = [f"config_hash\t{self.config_hash}", f"version\t{self.version}"]
        lines += [f"timing.{k}\t{v:.3f}" for k, v in self.timings.items()]
        lines += [f"file.{k}\t{v}" for k, v in sorted(self.files.items())]
        lines += [f"report.{n}\t{'pass' if ok else 'fail'}" for n, ok in self.reports]
        path = directory / MANIFEST_FILE
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def read(cls, directory: Path) -> "RunManifest | None":
        path = directory / MANIFEST_FILE
        if not path.exists():
            return None
        m = cls("", "")
        for line in path.read_text().splitlines():
            key, _, val = line.partition("\t")
            if key == "config_hash":
                m.config_hash = val
            elif key == "version":
                m.version = val
            elif key.startswith("timing."):
                m.timings[key[7:]] = float(val)
            elif key.startswith("file."):
                m.files[key[5:]] = val
            elif key.startswith("report."):
                m.reports.append((key[7:], val == "pass"))
        return m

    def drop_phase(self, phase: str):
        self.timings.pop(phase, None)
        self.reports = [(n, ok) for n, ok in self.reports if not n.startswith(phase + ".")]

    def verify(self, directory: Path) -> bool:
        return all((directory / n).exists() and sha256(directory / n) == h for n, h in self.files.items())


# ------------------------------------------------------------------ experiment


class Experiment:
    def __init__(self, config: ExperimentConfig):
        self.cfg = config.validate()
        self.model = self.cfg.model.build()
        self.out = self.cfg.output_dir
        self.manifest = RunManifest(self.cfg.config_hash, __version__)
        self._table: IDSTable | None = None
        self._stats: list[SpectrumSample] | None = None
        self.runner: Runner | None = None
        self.results: dict[str, list] = {}  # phase -> reports from this process

    # -- shared pieces

    def _header(self, phase: str) -> dict:
        head = {"phase": phase, "model_id": self.model.model_id, "config_hash": self.cfg.config_hash, "seed": self.cfg.seed}
        head.update({f"label.{k}": v for k, v in sorted(self.cfg.labels.items())})
        return head

    def _record(self, name: str, path: Path):
        self.manifest.files[name] = sha256(path)

    def _emit(self, phase: str, reports: list) -> list:
        rows = []
        for rep in reports:
            rows.append(rep.as_dict())
            tag = getattr(rep, "name", None) or getattr(rep, "quantity")
            self.manifest.reports.append((f"{phase}.{tag}", bool(rep.passed)))
        fname = f"{phase}_reports.txt"
        self._record(fname, write_reports(self.out / fname, rows, self._header(phase)))
        return reports

    def spectra(self, side: int, realizations) -> list[SpectrumSample]:
        g = LatticeGeometry(self.cfg.model.dimension, side)
        vals = self.runner.map(_chunk_spectra, realizations, self.cfg.model, side, self.cfg.seed, self.cfg.solver)
        mid = self.model.model_id
        return [SpectrumSample(v, g, Provenance(mid, self.cfg.seed, r)) for v, r in zip(vals, realizations)]

    @property
    def table(self) -> IDSTable:
        if self._table is None:
            path = self.out / IDS_FILE
            if not path.exists():
                raise MissingTableError(
                    f"no IDS table at {path}; build one first with `andersonlab ids-build --config <file>` "
                    "using the same configuration and output directory"
                )
            table = read_table(path)
            if table.model_id != self.model.model_id:
                raise ProvenanceError(f"{path} was built for model {table.model_id}, config describes {self.model.model_id}")
            self._table = table
            self._record(IDS_FILE, path)
        return self._table

    @property
    def stats(self) -> list[SpectrumSample]:
        if self._stats is None:
            t = time.perf_counter()
            self._stats = self.spectra(self.cfg.stats_side, self.cfg.stats.range)
            self.manifest.timings["stats-pool"] = time.perf_counter() - t
            for s in self._stats[:1]:
                if self.table.covers(s.provenance.seed, s.provenance.realization):
                    raise ProvenanceError("statistics realizations overlap the IDS pool")
        return self._stats

    def bulk_anchor(self) -> float:
        e = self.cfg.window.bulk_energy
        return float(self.table.quantile(0.5)) if e is None else float(e)

    def edge_energy(self) -> float:
        lo, hi = almost_sure_spectrum(self.model.kernel, self.model.disorder)
        return lo if self.cfg.window.edge == "lower" else hi

    def edge_mass(self) -> float:
        w = self.cfg.window
        if w.edge_alpha is None:
            return w.edge_mass
        return math.log(self.cfg.stats_side**self.cfg.model.dimension) ** w.edge_alpha

    # -- phases

    def ids_build(self):
        t = time.perf_counter()
        samples = self.spectra(self.cfg.ids_side, self.cfg.ids.range)
        table = IDSTable.from_spectra(samples, self.model.model_id)
        self._table = table
        self._record(IDS_FILE, write_table(table, self.out / IDS_FILE))
        self.manifest.timings["ids-build"] = time.perf_counter() - t
        return []

    def bulk_stats(self):
        w = self.cfg.window
        s = w.half_width
        e0 = self.bulk_anchor()
        batch = collect_point_process([unfold(x, self.table, e0, s) for x in self.stats])
        self._record("bulk_batch.tsv", write_batch(self.out / "bulk_batch.tsv", [u.realization for u in batch.samples], [u.values for u in batch.samples]))
        return self._emit(
            "bulk-stats",
            [
                poisson_count_test(batch, (-s, s)),
                intensity_check(batch),
                increment_correlation_test(batch, (-s, 0.0), (0.0, s)),
            ],
        )

    def edge_stats(self):
        w = self.cfg.window
        side = "lower" if w.edge == "lower" else "upper"
        edge = self.edge_energy()
        mass = self.edge_mass()
        batch = collect_point_process([unfold(x, self.table, edge, mass, edge=True) for x in self.stats])
        self._record("edge_batch.tsv", write_batch(self.out / "edge_batch.tsv", [u.realization for u in batch.samples], [u.values for u in batch.samples]))
        window = (0.0, mass) if side == "lower" else (-mass, 0.0)
        # the interval form of the same window, for the record
        interval = interval_for_mass(self.table, EdgeAnchor(side, edge), mass, self.cfg.stats_side**self.cfg.model.dimension)
        count = poisson_count_test(batch, window)
        count.details.update({"edge_energy": edge, "interval_low": interval[0], "interval_high": interval[1]})
        reports = [count, half_line_check(batch, side)]
        offsets = geometric_offsets(w.lifshitz_a0, w.lifshitz_points)
        try:
            fit = lifshitz_exponent_fit(self.table, edge, offsets, side)
            reports.append(
                TestReport(
                    "lifshitz-exponent",
                    abs(fit.exponent - 0.5),
                    int(fit.offsets_used.size),
                    0.15,
                    {"exponent": fit.exponent, "residual_norm": fit.residual_norm, "offsets": list(fit.offsets_used)},
                )
            )
        except ValueError as exc:
            reports.append(TestReport("lifshitz-exponent", math.inf, 0, 0.15, {"error": str(exc)}))
        return self._emit("edge-stats", reports)

    def spacings(self):
        s = self.cfg.window.half_width
        e0 = self.bulk_anchor()
        interval = interval_for_mass(self.table, e0, 2 * s, self.cfg.stats_side**self.cfg.model.dimension)
        pooled = pool_spacings([spacings(x, self.table, interval) for x in self.stats])
        self._record(
            "spacings.tsv",
            write_columns(
                self.out / "spacings.tsv",
                ["realization", "in_window"],
                zip(self.cfg.stats.range, pooled.per_realization),
                {"normalizer": pooled.normalizer, "spacings": pooled.spacings.size},
            ),
        )
        rep = spacing_test(pooled)
        rep.details.update({"interval_low": interval[0], "interval_high": interval[1]})
        return self._emit("spacings", [rep])

    def clt(self):
        w = self.cfg.window
        side = self.cfg.clt_side
        volume = side**self.cfg.model.dimension
        interval = interval_for_mass(self.table, self.bulk_anchor(), w.clt_mass, volume)
        reals = range(self.cfg.stats.first_realization, self.cfg.stats.first_realization + self.cfg.clt_realizations)
        if any(self.table.covers(self.cfg.seed, r) for r in (reals.start, reals.stop - 1)):
            raise ProvenanceError("CLT realizations overlap the IDS pool")
        counts = np.array(self.runner.map(_chunk_counts, reals, self.cfg.model, side, self.cfg.seed, interval))
        report = CountReport(counts, self.table.interval_mass(*interval) * volume)
        dev = deviation_report(report, w.gamma_grid)
        self._record(
            "clt_counts.tsv",
            write_columns(
                self.out / "clt_counts.tsv",
                ["realization", "count"],
                zip(reals, counts.tolist()),
                {"target_mean": report.target_mean, "interval_low": interval[0], "interval_high": interval[1]},
            ),
        )
        self._record(
            "clt_deviations.tsv",
            write_columns(self.out / "clt_deviations.tsv", ["gamma", "threshold", "fraction"], zip(dev["gamma"], dev["threshold"], dev["fraction"])),
        )
        reports = clt_report(report)
        reports.append(TestReport("deviation-monotone", 0.0 if dev["monotone"] else 1.0, len(counts), 0.0, {"fractions": list(dev["fraction"])}))
        return self._emit("clt", reports)

    def wegner_minami(self):
        w = self.cfg.window
        e0 = self.bulk_anchor()
        volume = self.cfg.stats_side**self.cfg.model.dimension
        gsup = self.model.disorder.density_sup
        reports = []
        masses = sorted(w.wegner_masses)
        nested = [interval_for_mass(self.table, e0, m, volume) for m in masses]
        for m, iv in zip(masses, nested):
            classical, _ = wegner_estimate(self.stats, iv, self.table, gsup)
            reports.append(dataclasses.replace(classical, quantity=f"W[mass={m!r}]"))
        main = interval_for_mass(self.table, e0, w.bulk_mass, volume)
        _, enhanced = wegner_estimate(self.stats, main, self.table, gsup)
        reports.append(enhanced)
        reports.extend(minami_estimate(self.stats, main, self.table, gsup))
        if self.table.interval_mass(*nested[-1]) * volume >= w.hom_floor and len(nested) >= 2:
            reports.append(high_order_moment(self.stats, nested, self.table, gsup))
        counts_by_side = {}
        offset = self.cfg.stats.first_realization + self.cfg.stats.realizations
        for side in self.cfg.side_grid:
            reals = range(offset, offset + self.cfg.grid_realizations)
            samples = self.spectra(side, reals)
            counts_by_side[side] = np.array([np.count_nonzero((s.eigenvalues >= main[0]) & (s.eigenvalues <= main[1])) for s in samples])
            offset += self.cfg.grid_realizations
        mass = self.table.interval_mass(*main)
        rows = wcontrol_rows(counts_by_side, self.cfg.model.dimension, mass, self.table.pooled_sites)
        summary = wcontrol_summary(rows)
        self._record(
            "wcontrol.tsv",
            write_columns(
                self.out / "wcontrol.tsv",
                ["side", "volume", "realizations", "mean_count", "standard_error", "target", "target_error", "discrepancy", "z"],
                [(r.side, r.volume, r.realizations, r.mean_count, r.standard_error, r.target, r.target_error, r.discrepancy, r.z) for r in rows],
                summary,
            ),
        )
        reports.append(TestReport("wcontrol", summary["max_z"], len(rows), 2.0, {"nongrowing": summary["nongrowing"]}))
        return self._emit("wegner-minami", reports)

    def reduce(self):
        r = self.cfg.reduction
        if not r.keep_eigenvectors:
            raise ValueError("the reduce phase needs eigenvectors; set keep_eigenvectors = true in the [reduction] section")
        side = self.cfg.stats_side
        volume = side**self.cfg.model.dimension
        g = LatticeGeometry(self.cfg.model.dimension, side)
        e0 = self.bulk_anchor()
        interval = interval_for_mass(self.table, e0, r.window_mass, volume)
        grid = sorted(set(r.c2_grid) | {r.c2})
        boxes = [scales(side, r.c1, c2) for c2 in grid]
        reals = range(self.cfg.stats.first_realization, self.cfg.stats.first_realization + r.realizations)
        results = self.runner.map(_chunk_reduction, reals, self.cfg.model, side, self.cfg.seed, interval, boxes, r.boundary)
        xi = float(np.nanmedian([x for x, _ in results]))
        rows, medians, summaries = [], [], {}
        for i, c2 in enumerate(grid):
            reps = [per[i] for _, per in results]
            summ = summarize_reductions(reps)
            summaries[c2] = summ
            medians.append(summ["error_median"])
            if c2 == r.c2:
                rows = [(rep.realization, j, eg, el, err) for rep in reps for j, eg, el, err in rep.pairs]
        box_side, buffer = scales(side, r.c1, r.c2)
        main = summaries[r.c2]
        summary = {"box_side": box_side, "buffer": buffer, "median_decay": xi, **main}
        for c2, med in zip(grid, medians):
            summary[f"error_median_c2={c2!r}"] = med
        self._record(
            "reduction.tsv",
            write_columns(self.out / "reduction.tsv", ["realization", "box", "global", "local", "error"], rows, summary),
        )
        bound = 10 * math.exp(-xi * buffer / 2)
        increases = [b - a for a, b in zip(medians, medians[1:])]
        reports = [
            TestReport("matched-fraction", 1.0 - main["matched_fraction"], main["in_box_centers"], 0.1, {"matched_fraction": main["matched_fraction"]}),
            TestReport("matching-error", main["error_median"], main["matched"], bound, {"median_decay": xi}),
            TestReport("error-monotone-in-buffer", max([0.0] + increases), len(grid), 0.0, {"c2": grid, "medians": medians}),
        ]
        # single-local-eigenvalue statistics on many boxes
        box_interval = interval_for_mass(self.table, e0, r.bernoulli_mass, box_side**self.cfg.model.dimension)
        per_parent = decompose(g, box_side, buffer).box_count
        parents = math.ceil(r.bernoulli_samples / per_parent)
        start = reals.stop
        locals_ = self.runner.map(_chunk_boxes, range(start, start + parents), self.cfg.model, side, self.cfg.seed, box_side, buffer, box_interval, r.boundary)
        est = bernoulli_sample(locals_, box_interval, box_side**self.cfg.model.dimension, self.table, min_samples=min(10_000, r.bernoulli_samples))
        reports.append(
            TestReport(
                "single-eigenvalue-ratio",
                abs(est.ratio - 1.0),
                est.samples,
                0.1,
                {"p_hat": est.p_hat, "ci_low": est.ci_low, "ci_high": est.ci_high, "expected": est.expected, "ratio": est.ratio},
            )
        )
        for inc in est.increments:
            reports.append(TestReport(f"increment[{inc['y']!r},{inc['x']!r}]", inc["z"], est.samples, 3.0, inc))
        return self._emit("reduce", reports)

    # -- driver

    def run(self, phases=None) -> RunManifest:
        phases = list(PHASES if phases is None else phases)
        unknown = [p for p in phases if p not in PHASES]
        if unknown:
            raise ValueError(f"unknown phases {unknown}; choose from {PHASES}")
        self.out.mkdir(parents=True, exist_ok=True)
        # phases run in separate invocations share one manifest as long as the config matches
        previous = RunManifest.read(self.out)
        if previous is not None and previous.config_hash == self.cfg.config_hash:
            for phase in phases:
                previous.drop_phase(phase)
            previous.version = __version__
            previous.files.update(self.manifest.files)
            self.manifest = previous
        self.runner = Runner(self.cfg.threads)
        try:
            for phase in PHASES:
                if phase not in phases:
                    continue
                t = time.perf_counter()
                self.results[phase] = getattr(self, phase.replace("-", "_"))()
                self.manifest.timings[phase] = time.perf_counter() - t
        finally:
            self.runner.close()
        self.manifest.write(self.out)
        return self.manifest


def run_experiment(config: ExperimentConfig, phases=None) -> RunManifest:
    """Run the requested phases (all by default) and write reports plus a manifest."""
    return Experiment(config).run(phases)
