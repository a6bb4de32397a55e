"""Hopping kernels, disorder laws, lattice geometry and the periodic Anderson Hamiltonian."""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, sparse

Offset = tuple[int, ...]


@dataclass(frozen=True)
class HoppingKernel:
    """Real symmetric convolution kernel ``h_k`` on ``Z^d`` with finite support.

    ``coefficients`` maps lattice offsets to amplitudes; missing offsets are zero.
    The on-site term ``h_0`` is allowed. A kernel with no off-diagonal hopping is
    rejected unless ``allow_zero_hopping`` is set, which is reserved for the
    multiplication-operator reference model used in calibration runs.
    """

    dimension: int
    coefficients: Mapping[Offset, float] = field(default_factory=dict)
    allow_zero_hopping: bool = False

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        clean = {}
        for k, v in self.coefficients.items():
            k = tuple(int(c) for c in np.atleast_1d(k))
            if len(k) != self.dimension:
                raise ValueError(f"offset {k} does not have dimension {self.dimension}")
            if not np.isfinite(v):
                raise ValueError(f"non-finite amplitude at offset {k}")
            if v != 0.0:
                clean[k] = float(v)
        for k, v in clean.items():
            mirror = tuple(-c for c in k)
            if clean.get(mirror, 0.0) != v:
                raise ValueError(f"kernel is not symmetric: h{k}={v} but h{mirror}={clean.get(mirror, 0.0)}")
        if not self.allow_zero_hopping and not any(any(k) for k in clean):
            raise ValueError("kernel has no nonzero off-diagonal amplitude")
        object.__setattr__(self, "coefficients", dict(sorted(clean.items())))

    @classmethod
    def nearest_neighbor(cls, dimension: int = 1, hopping: float = 1.0, onsite: float = 0.0) -> "HoppingKernel":
        coeffs = {}
        for axis in range(dimension):
            for sign in (1, -1):
                k = [0] * dimension
                k[axis] = sign
                coeffs[tuple(k)] = hopping
        if onsite:
            coeffs[(0,) * dimension] = onsite
        return cls(dimension, coeffs)

    @classmethod
    def zero(cls, dimension: int = 1) -> "HoppingKernel":
        return cls(dimension, {}, allow_zero_hopping=True)

    @classmethod
    def from_half(cls, dimension: int, half: Mapping[Offset, float]) -> "HoppingKernel":
        """Build a symmetric kernel from amplitudes given for one of each pair ``k, -k``."""
        coeffs = {}
        for k, v in half.items():
            k = tuple(int(c) for c in np.atleast_1d(k))
            coeffs[k] = v
            coeffs[tuple(-c for c in k)] = v
        return cls(dimension, coeffs)

    @property
    def support_radius(self) -> int:
        return max((max(abs(c) for c in k) for k in self.coefficients), default=0)

    @property
    def kernel_id(self) -> str:
        terms = ";".join(f"{','.join(map(str, k))}={v!r}" for k, v in self.coefficients.items())
        return f"d{self.dimension}[{terms}]"


def symbol_eval(kernel: HoppingKernel, theta) -> float:
    """Return ``h(theta) = sum_k h_k cos(k . theta)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (kernel.dimension,):
        raise ValueError("theta must have one angle per lattice dimension")
    if np.any(np.abs(theta) > np.pi):
        raise ValueError("angles must lie in [-pi, pi]")
    return float(sum(v * np.cos(np.dot(k, theta)) for k, v in kernel.coefficients.items()))


def _symbol_grid(kernel: HoppingKernel, thetas: np.ndarray) -> np.ndarray:
    out = np.zeros(thetas.shape[0])
    for k, v in kernel.coefficients.items():
        out += v * np.cos(thetas @ np.asarray(k, dtype=float))
    return out


@dataclass(frozen=True)
class DisorderSpec:
    """Single-site law ``lambda * mu`` of the random potential.

    ``family`` is ``"uniform"`` (``mu`` uniform on ``[support_min, support_max]``) or
    ``"tabulated"`` (``quantiles`` holds the inverse CDF of ``mu`` on an evenly spaced
    probability grid from 0 to 1, sampled by linear interpolation).
    """

    family: str = "uniform"
    support_min: float = 0.0
    support_max: float = 1.0
    coupling: float = 1.0
    quantiles: tuple[float, ...] = ()

    def __post_init__(self):
        if self.coupling <= 0 or not np.isfinite(self.coupling):
            raise ValueError("coupling must be positive and finite")
        if self.family == "uniform":
            if not self.support_min < self.support_max:
                raise ValueError("support_min must be below support_max")
        elif self.family == "tabulated":
            q = np.asarray(self.quantiles, dtype=float)
            if q.size < 2 or np.any(np.diff(q) <= 0):
                raise ValueError("tabulated inverse CDF needs at least two strictly increasing values")
            object.__setattr__(self, "quantiles", tuple(map(float, q)))
            object.__setattr__(self, "support_min", float(q[0]))
            object.__setattr__(self, "support_max", float(q[-1]))
        else:
            raise ValueError(f"unknown disorder family {self.family!r}")

    @classmethod
    def uniform(cls, support_min: float = 0.0, support_max: float = 1.0, coupling: float = 1.0) -> "DisorderSpec":
        return cls("uniform", support_min, support_max, coupling)

    @classmethod
    def tabulated(cls, quantiles: Sequence[float], coupling: float = 1.0) -> "DisorderSpec":
        return cls("tabulated", coupling=coupling, quantiles=tuple(quantiles))

    @property
    def density_sup(self) -> float:
        """Sup norm of the density of the scaled single-site law."""
        if self.family == "uniform":
            return 1.0 / (self.coupling * (self.support_max - self.support_min))
        q = np.asarray(self.quantiles)
        dp = 1.0 / (q.size - 1)
        return float(np.max(dp / np.diff(q)) / self.coupling)

    @property
    def disorder_id(self) -> str:
        if self.family == "uniform":
            return f"uniform[{self.support_min!r},{self.support_max!r}]x{self.coupling!r}"
        digest = hashlib.sha1(repr(self.quantiles).encode()).hexdigest()[:12]
        return f"tabulated[{digest}]x{self.coupling!r}"

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniform [0,1) variates to draws of the scaled law."""
        if self.family == "uniform":
            return self.coupling * (self.support_min + (self.support_max - self.support_min) * u)
        q = np.asarray(self.quantiles)
        return self.coupling * np.interp(u, np.linspace(0.0, 1.0, q.size), q)


@dataclass(frozen=True)
class LatticeGeometry:
    """Periodic cube of side ``side`` in ``Z^d``; sites are indexed lexicographically."""

    dimension: int
    side: int

    def __post_init__(self):
        if self.dimension < 1 or self.side < 1:
            raise ValueError("dimension and side must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dimension

    @property
    def site_count(self) -> int:
        return self.side ** self.dimension

    def index(self, coords) -> np.ndarray | int:
        c = np.asarray(coords) % self.side
        idx = np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.shape)
        return int(idx) if np.ndim(idx) == 0 else idx

    def coords(self, index) -> np.ndarray:
        return np.stack(np.unravel_index(index, self.shape), axis=-1)

    @cached_property
    def all_coords(self) -> np.ndarray:
        return self.coords(np.arange(self.site_count))

    def distance(self, x, y) -> np.ndarray:
        """Periodic sup-norm distance between coordinate arrays (broadcasting)."""
        diff = np.abs(np.asarray(x) - np.asarray(y)) % self.side
        return np.minimum(diff, self.side - diff).max(axis=-1)


@dataclass(frozen=True)
class Provenance:
    model_id: str = ""
    seed: int | None = None
    realization: int | None = None


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    geometry: LatticeGeometry
    matrix: np.ndarray
    disorder: np.ndarray
    provenance: Provenance = Provenance()
    kernel_id: str = ""

    @property
    def order(self) -> int:
        return self.matrix.shape[0]

    def gershgorin(self) -> tuple[float, float]:
        m = self.matrix
        diag = np.diag(m)
        radius = np.abs(m).sum(axis=1) - np.abs(diag)
        return float(np.min(diag - radius)), float(np.max(diag + radius))


@dataclass(frozen=True)
class AndersonModel:
    kernel: HoppingKernel
    disorder: DisorderSpec

    @property
    def model_id(self) -> str:
        text = f"{self.kernel.kernel_id}|{self.disorder.disorder_id}"
        return hashlib.sha1(text.encode()).hexdigest()[:16]

    def realize(self, geometry: LatticeGeometry, seed: int, realization: int) -> HamiltonianMatrix:
        omega = sample_disorder(self.disorder, geometry, seed, realization)
        prov = Provenance(self.model_id, seed, realization)
        return build_hamiltonian(self.kernel, geometry, omega, provenance=prov)


def almost_sure_spectrum(kernel: HoppingKernel, disorder: DisorderSpec) -> tuple[float, float]:
    """Interval ``[min h + lambda*a, max h + lambda*b]``."""
    d = kernel.dimension
    per_axis = {1: 4097, 2: 257, 3: 65}.get(d, 17)
    axis = np.linspace(-np.pi, np.pi, per_axis)
    thetas = np.array(list(itertools.product(axis, repeat=d)))
    values = _symbol_grid(kernel, thetas)

    def refine(sign):
        # local polish of the best grid point for sign * h
        start = thetas[np.argmin(sign * values)]
        res = optimize.minimize(
            lambda t: sign * _symbol_grid(kernel, t[None, :])[0],
            start,
            method="L-BFGS-B",
            bounds=[(-np.pi, np.pi)] * d,
            options={"ftol": 1e-15, "gtol": 1e-12},
        )
        return sign * float(res.fun)

    h_min = min(values.min(), refine(1.0))
    h_max = max(values.max(), refine(-1.0))
    return (
        float(h_min + disorder.coupling * disorder.support_min),
        float(h_max + disorder.coupling * disorder.support_max),
    )


def sample_disorder(spec: DisorderSpec, geometry: LatticeGeometry, seed: int, realization: int) -> np.ndarray:
    """Site potentials for one realization.

    The stream is keyed by ``(seed, realization)`` through a counter-based bit
    generator, and site ``i`` always receives the ``i``-th draw, so the result does not
    depend on which worker produces it or in what order.
    """
    if realization < 0:
        raise ValueError("realization index must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(realization),))
    rng = np.random.Generator(np.random.Philox(ss))
    return spec.transform(rng.random(geometry.site_count))


def wrapped_kernel(kernel: HoppingKernel, geometry: LatticeGeometry) -> dict[Offset, float]:
    """Fold the kernel onto the torus: ``W[r] = sum_beta h_{r + L beta}``."""
    if kernel.dimension != geometry.dimension:
        raise ValueError("kernel and geometry dimensions differ")
    out: dict[Offset, float] = {}
    for k, v in kernel.coefficients.items():
        r = tuple(c % geometry.side for c in k)
        out[r] = out.get(r, 0.0) + v
    return out


def build_hamiltonian(
    kernel: HoppingKernel,
    geometry: LatticeGeometry,
    omega,
    provenance: Provenance = Provenance(),
) -> HamiltonianMatrix:
    omega = np.asarray(omega, dtype=float)
    n = geometry.site_count
    if omega.shape != (n,):
        raise ValueError(f"disorder vector has shape {omega.shape}, expected ({n},)")
    if geometry.side < 2:
        raise ValueError("side length must be at least 2")
    h = np.zeros((n, n))
    rows = np.arange(n)
    coords = geometry.all_coords
    for r, v in wrapped_kernel(kernel, geometry).items():
        # entry (x, y) with x - y = r (mod L)
        cols = geometry.index(coords - np.asarray(r))
        h[rows, cols] = v
    # mirror the upper triangle so both entries come from one stored value
    h = np.triu(h) + np.triu(h, 1).T
    h[rows, rows] += omega
    return HamiltonianMatrix(geometry, h, omega.copy(), provenance, kernel.kernel_id)


def sparse_hamiltonian(kernel: HoppingKernel, geometry: LatticeGeometry, omega) -> sparse.csr_matrix:
    """The matrix of ``build_hamiltonian`` in CSR form, for volumes too large to store densely."""
    omega = np.asarray(omega, dtype=float)
    n = geometry.site_count
    if omega.shape != (n,):
        raise ValueError(f"disorder vector has shape {omega.shape}, expected ({n},)")
    if geometry.side < 2:
        raise ValueError("side length must be at least 2")
    rows = np.arange(n)
    coords = geometry.all_coords
    ri, ci, vals = [], [], []
    for r, v in wrapped_kernel(kernel, geometry).items():
        cols = geometry.index(coords - np.asarray(r))
        keep = cols >= rows
        ri.append(rows[keep])
        ci.append(cols[keep])
        vals.append(np.full(int(keep.sum()), v))
    upper = sparse.coo_matrix(
        (np.concatenate(vals) if vals else np.empty(0), (np.concatenate(ri) if ri else rows[:0], np.concatenate(ci) if ci else rows[:0])),
        shape=(n, n),
    ).tocsr()
    h = upper + sparse.triu(upper, 1).T + sparse.diags(omega)
    return h.tocsr()
