"""Experiment configuration: a strict INI-style key-value file.

Every section and key is checked against the schema below; anything unknown is an
error, so a typo such as ``rho_prime`` for ``rho'`` cannot be silently ignored.
See ``configs/example.ini`` for an annotated example.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .lattice import AndersonModel, DisorderSpec, HoppingKernel

OUTPUT_ENV = "ANDERSONLAB_OUT"


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(section.key, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.errors))


@dataclass(frozen=True)
class ModelConfig:
    dimension: int = 1
    kernel: str = "nearest-neighbor"  # nearest-neighbor | zero | custom
    hopping: float = 1.0
    offsets: tuple = ()  # custom: ((offset tuple), value) on one side of the origin
    disorder: str = "uniform"  # uniform | tabulated
    support_min: float = 0.0
    support_max: float = 1.0
    coupling: float = 1.0
    quantiles: tuple = ()

    def build(self) -> AndersonModel:
        if self.kernel == "nearest-neighbor":
            kernel = HoppingKernel.nearest_neighbor(self.dimension, self.hopping)
        elif self.kernel == "zero":
            kernel = HoppingKernel.zero(self.dimension)
        elif self.kernel == "custom":
            kernel = HoppingKernel.from_half(self.dimension, dict(self.offsets))
        else:
            raise ValueError(f"unknown kernel {self.kernel!r} (nearest-neighbor, zero or custom)")
        if self.disorder == "uniform":
            disorder = DisorderSpec.uniform(self.support_min, self.support_max, self.coupling)
        elif self.disorder == "tabulated":
            disorder = DisorderSpec.tabulated(self.quantiles, self.coupling)
        else:
            raise ValueError(f"unknown disorder family {self.disorder!r} (uniform or tabulated)")
        return AndersonModel(kernel, disorder)


@dataclass(frozen=True)
class PhaseConfig:
    realizations: int
    first_realization: int = 0

    @property
    def range(self) -> range:
        return range(self.first_realization, self.first_realization + self.realizations)


@dataclass(frozen=True)
class WindowConfig:
    bulk_energy: float | None = None  # None: IDS median
    bulk_mass: float = 4.0
    edge: str = "lower"
    edge_alpha: float | None = 1.0  # edge mass log^alpha |V|; None uses edge_mass
    edge_mass: float = 4.0
    half_width: float = 4.0
    clt_mass: float = 100.0
    gamma_grid: tuple = (0.5, 1.0, 1.5, 2.0)
    lifshitz_a0: float = 0.5
    lifshitz_points: int = 6
    wegner_masses: tuple = (1.0, 4.0, 16.0)
    hom_floor: float = 1.0


@dataclass(frozen=True)
class ReductionConfig:
    c1: float = 8.0
    c2: float = 3.0
    c2_grid: tuple = (2.0, 3.0, 4.0)
    boundary: str = "periodic"
    keep_eigenvectors: bool = False
    realizations: int = 20
    window_mass: float = 40.0
    bernoulli_mass: float = 0.05
    bernoulli_samples: int = 20000


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    ids_side: int = 512
    stats_side: int = 1000
    side_grid: tuple = (128, 256, 512)
    clt_side: int = 32000
    ids: PhaseConfig = field(default_factory=lambda: PhaseConfig(20000, 0))
    stats: PhaseConfig = field(default_factory=lambda: PhaseConfig(5000, 1_000_000))
    grid_realizations: int = 2000
    clt_realizations: int = 2000
    window: WindowConfig = field(default_factory=WindowConfig)
    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    labels: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    output: str = "runs/default"
    solver: str = "lapack"

    def validate(self) -> "ExperimentConfig":
        errs = []
        try:
            self.model.build()
        except ValueError as exc:
            errs.append(("model", str(exc)))
        for name in ("ids_side", "stats_side", "clt_side"):
            if getattr(self, name) < 8:
                errs.append((f"geometry.{name}", "side lengths must be at least 8"))
        if any(s < 8 for s in self.side_grid):
            errs.append(("geometry.side_grid", "side lengths must be at least 8"))
        for name in ("ids", "stats"):
            ph = getattr(self, name)
            if ph.realizations <= 0:
                errs.append((f"{name}.realizations", "must be positive"))
            if ph.first_realization < 0:
                errs.append((f"{name}.first_realization", "must be nonnegative"))
        a, b = self.ids.range, self.stats.range
        if a.start < b.stop and b.start < a.stop:
            errs.append(("stats.first_realization", f"statistics realizations {b.start}..{b.stop - 1} overlap the IDS pool {a.start}..{a.stop - 1}"))
        for name in ("grid_realizations", "clt_realizations"):
            if getattr(self, name) <= 0:
                errs.append((f"stats.{name}", "must be positive"))
        if self.threads < 1:
            errs.append(("run.threads", "must be at least 1"))
        if self.solver not in ("lapack", "native"):
            errs.append(("run.solver", "must be 'lapack' or 'native'"))
        w = self.window
        if w.edge not in ("lower", "upper"):
            errs.append(("window.edge", "must be 'lower' or 'upper'"))
        for key in ("bulk_mass", "edge_mass", "half_width", "clt_mass", "lifshitz_a0"):
            if getattr(w, key) <= 0:
                errs.append((f"window.{key}", "must be positive"))
        r = self.reduction
        if r.boundary not in ("periodic", "dirichlet"):
            errs.append(("reduction.boundary", "must be 'periodic' or 'dirichlet'"))
        for key in ("c1", "c2", "realizations", "window_mass", "bernoulli_mass", "bernoulli_samples"):
            if getattr(r, key) <= 0:
                errs.append((f"reduction.{key}", "must be positive"))
        if errs:
            raise ConfigError(errs)
        return self

    @property
    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output)

    def canonical(self) -> str:
        data = dataclasses.asdict(self)
        data.pop("threads")  # results do not depend on it
        data.pop("output")
        return json.dumps(data, sort_keys=True, default=list)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, seed=None, threads=None, output=None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if threads is not None:
            changes["threads"] = threads
        if output is not None:
            changes["output"] = str(output)
        return dataclasses.replace(self, **changes).validate()


# ------------------------------------------------------------------ parsing


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _offsets(text):
    # "1:1.0; 2:0.5" or "1,0:1.0; 0,1:1.0"
    out = []
    for item in text.split(";"):
        if not item.strip():
            continue
        off, _, val = item.partition(":")
        out.append((tuple(int(c) for c in off.split(",")), float(val)))
    return tuple(out)


_SCHEMA = {
    "model": {
        "dimension": int,
        "kernel": str,
        "hopping": float,
        "offsets": _offsets,
        "disorder": str,
        "support_min": float,
        "support_max": float,
        "coupling": float,
        "quantiles": _floats,
    },
    "geometry": {"ids_side": int, "stats_side": int, "clt_side": int, "side_grid": lambda t: tuple(int(x) for x in _floats(t))},
    "ids": {"realizations": int, "first_realization": int},
    "stats": {"realizations": int, "first_realization": int, "grid_realizations": int, "clt_realizations": int},
    "window": {
        "bulk_energy": _opt_float,
        "bulk_mass": float,
        "edge": str,
        "edge_alpha": _opt_float,
        "edge_mass": float,
        "half_width": float,
        "clt_mass": float,
        "gamma_grid": _floats,
        "lifshitz_a0": float,
        "lifshitz_points": int,
        "wegner_masses": _floats,
        "hom_floor": float,
    },
    "reduction": {
        "c1": float,
        "c2": float,
        "c2_grid": _floats,
        "boundary": str,
        "keep_eigenvectors": _bool,
        "realizations": int,
        "window_mass": float,
        "bernoulli_mass": float,
        "bernoulli_samples": int,
    },
    "labels": {"rho": float, "rho'": float, "rho''": float, "alpha": float, "alpha'": float, "beta": float, "beta'": float, "delta": float},
    "run": {"seed": int, "threads": int, "output": str, "solver": str},
}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str  # keep case and primes as written
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([("file", str(exc))]) from None
    errs = []
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            errs.append((section, "unknown section"))
            continue
        values[section] = {}
        for key, raw in cp.items(section):
            conv = _SCHEMA[section].get(key)
            if conv is None:
                errs.append((f"{section}.{key}", "unknown key"))
                continue
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                errs.append((f"{section}.{key}", f"cannot parse {raw!r}: {exc}"))
    if errs:
        raise ConfigError(errs)

    base = ExperimentConfig()
    stats = dict(values.get("stats", {}))
    grid_realizations = stats.pop("grid_realizations", base.grid_realizations)
    clt_realizations = stats.pop("clt_realizations", base.clt_realizations)
    geom = values.get("geometry", {})
    run = values.get("run", {})
    cfg = ExperimentConfig(
        model=dataclasses.replace(base.model, **values.get("model", {})),
        ids_side=geom.get("ids_side", base.ids_side),
        stats_side=geom.get("stats_side", base.stats_side),
        side_grid=geom.get("side_grid", base.side_grid),
        clt_side=geom.get("clt_side", base.clt_side),
        ids=dataclasses.replace(base.ids, **values.get("ids", {})),
        stats=dataclasses.replace(base.stats, **stats),
        grid_realizations=grid_realizations,
        clt_realizations=clt_realizations,
        window=dataclasses.replace(base.window, **values.get("window", {})),
        reduction=dataclasses.replace(base.reduction, **values.get("reduction", {})),
        labels=dict(values.get("labels", {})),
        **run,
    )
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([("file", f"{path} does not exist")])
    return parse_config(path.read_text(), str(path))
