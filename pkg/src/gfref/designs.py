"""Sampling designs, the auxiliary regular grid and its spectral design."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "SpatialDesign",
    "AuxGrid",
    "SpectralDesign",
    "TuningReport",
    "constant_trend",
    "quadratic_trend",
    "regular_grid_design",
    "build_spectral_design",
    "build_aux_grid",
    "nearest_neighbor_distances",
    "tune_defaults",
    "is_regular",
    "as_aux_grid",
]

REGULARITY_CV = 0.05
IRREGULAR_PERCENTILE = 85.0
LARGE_GRID_N = 400


def constant_trend(points):
    points = np.atleast_2d(points)
    return np.ones((points.shape[0], 1))


def quadratic_trend(points):
    """Columns 1, x, y, x^2, xy, y^2."""
    points = np.atleast_2d(points)
    x, y = points[:, 0], points[:, 1]
    return np.column_stack([np.ones_like(x), x, y, x**2, x * y, y**2])


@dataclass(frozen=True)
class SpatialDesign:
    """Sampling locations with their regression design matrix.

    ``trend`` evaluates the covariates at arbitrary points and is needed
    whenever covariates must be known on the auxiliary grid.
    """

    locations: np.ndarray
    covariates: np.ndarray
    trend: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.locations, dtype=float))
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if loc.shape[1] != 2:
            raise ValueError("locations must be an (n, 2) array")
        if X.shape[0] != loc.shape[0]:
            raise ValueError("covariates must have one row per location")
        n, p = X.shape
        if not n > p >= 1:
            raise ValueError(f"need n > p >= 1, got n={n}, p={p}")
        if np.unique(loc, axis=0).shape[0] < n:
            raise ValueError("locations must be distinct")
        if np.linalg.matrix_rank(X) < p:
            raise ValueError("design matrix X is rank deficient")
        loc.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "covariates", X)

    @classmethod
    def from_trend(cls, locations, trend=constant_trend):
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        return cls(locations, trend(locations), trend)

    @property
    def n(self):
        return self.locations.shape[0]

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def bounding_box(self):
        return self.locations.min(axis=0), self.locations.max(axis=0)

    def distances(self):
        diff = self.locations[:, None, :] - self.locations[None, :, :]
        return np.sqrt(np.sum(diff**2, axis=-1))


def regular_grid_design(k, side=1.0, trend=constant_trend):
    """k x k equally spaced grid on [0, side]^2, ordered with y running fastest."""
    ticks = np.linspace(0.0, side, k)
    xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
    return SpatialDesign.from_trend(np.column_stack([xx.ravel(), yy.ravel()]), trend)


# ---------------------------------------------------------------------------
# spectral design


@dataclass(frozen=True)
class SpectralDesign:
    """Spectral design W_M with the corner/boundary/interior/exterior classes.

    Index pairs are integer (m1, m2); the frequency of (m1, m2) is
    (2 pi m1 / (delta M1), 2 pi m2 / (delta M2)).
    """

    m1: int
    m2: int
    delta: float
    indices: np.ndarray  # all M index pairs
    corner: np.ndarray
    boundary: np.ndarray
    interior: np.ndarray
    exterior: np.ndarray

    @property
    def M(self):
        return self.m1 * self.m2

    @property
    def half(self):
        """Index set I = boundary + interior + exterior, in that order."""
        return np.concatenate([self.boundary, self.interior, self.exterior])

    def frequencies_of(self, idx):
        idx = np.asarray(idx, dtype=float).reshape(-1, 2)
        scale = 2 * np.pi / (self.delta * np.array([self.m1, self.m2], dtype=float))
        return idx * scale

    @property
    def frequencies(self):
        return self.frequencies_of(self.indices)

    @property
    def layout(self):
        """Index pairs in the (I_C, I, I) order used by the diagonal spectrum."""
        half = self.half
        return np.concatenate([self.corner, half, half])

    @property
    def layout_frequencies(self):
        return self.frequencies_of(self.layout)


def _check_even(name, value):
    if int(value) != value or value <= 0 or int(value) % 2:
        raise ValueError(f"{name} must be a positive even integer, got {value}")


def build_spectral_design(m1, m2, delta) -> SpectralDesign:
    _check_even("m1", m1)
    _check_even("m2", m2)
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    m1, m2 = int(m1), int(m2)
    h1, h2 = m1 // 2, m2 // 2
    r1 = np.arange(-h1 + 1, h1 + 1)
    r2 = np.arange(-h2 + 1, h2 + 1)
    a, b = np.meshgrid(r1, r2, indexing="ij")
    indices = np.column_stack([a.ravel(), b.ravel()])

    corner = np.array([(0, 0), (h1, 0), (0, h2), (h1, h2)])
    i1 = np.arange(1, h1)
    i2 = np.arange(1, h2)
    boundary = np.concatenate(
        [
            np.column_stack([i1, np.zeros_like(i1)]),
            np.column_stack([np.zeros_like(i2), i2]),
            np.column_stack([i1, np.full_like(i1, h2)]),
            np.column_stack([np.full_like(i2, h1), i2]),
        ]
    ).reshape(-1, 2)
    g1, g2 = np.meshgrid(i1, i2, indexing="ij")
    interior = np.column_stack([g1.ravel(), g2.ravel()]).reshape(-1, 2)
    e1, e2 = np.meshgrid(i1, -i2, indexing="ij")
    exterior = np.column_stack([e1.ravel(), e2.ravel()]).reshape(-1, 2)
    return SpectralDesign(m1, m2, float(delta), indices, corner, boundary, interior, exterior)


# ---------------------------------------------------------------------------
# auxiliary grid


@dataclass(frozen=True)
class AuxGrid:
    """Regular grid {delta, ..., delta M1} x {delta, ..., delta M2}, translated.

    ``index_points`` are the untranslated coordinates delta * (i, j), used for
    the trigonometric basis; ``points`` are the physical locations.
    """

    m1: int
    m2: int
    delta: float
    origin: np.ndarray

    @property
    def M(self):
        return self.m1 * self.m2

    @property
    def ij(self):
        i, j = np.meshgrid(np.arange(1, self.m1 + 1), np.arange(1, self.m2 + 1), indexing="ij")
        return np.column_stack([i.ravel(), j.ravel()])

    @property
    def index_points(self):
        return self.delta * self.ij.astype(float)

    @property
    def points(self):
        return self.index_points + self.origin

    @property
    def extent(self):
        lo = self.origin + self.delta
        return lo, lo + self.delta * (np.array([self.m1, self.m2]) - 1)


def build_aux_grid(region, m1, m2, delta) -> AuxGrid:
    """Grid anchored one spacing below the lower-left corner of ``region``.

    ``region`` is a pair (lower, upper) of 2-vectors. The first grid point then
    sits on the lower-left corner and the grid must reach the upper corner.
    """
    _check_even("m1", m1)
    _check_even("m2", m2)
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    lo, hi = (np.asarray(v, dtype=float) for v in region)
    if np.any(hi < lo):
        raise ValueError("region is empty")
    grid = AuxGrid(int(m1), int(m2), float(delta), lo - delta)
    _, top = grid.extent
    if np.any(top < hi - 1e-9 * max(1.0, float(np.max(np.abs(hi))))):
        span = hi - lo
        raise ValueError(
            f"grid of {m1}x{m2} points with spacing {delta:g} spans "
            f"{delta * (m1 - 1):g} x {delta * (m2 - 1):g}, smaller than the "
            f"region {span[0]:g} x {span[1]:g}"
        )
    return grid


# ---------------------------------------------------------------------------
# tuning heuristics


def nearest_neighbor_distances(design_or_points):
    """Distances from each site to its nearest neighbour, and their minimum."""
    pts = design_or_points.locations if isinstance(design_or_points, SpatialDesign) else design_or_points
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[0] < 2:
        raise ValueError("need at least two locations")
    d, _ = cKDTree(pts).query(pts, k=2)
    d = d[:, 1]
    if np.any(d == 0):
        raise ValueError("duplicate locations")
    return d, float(d.min())


@dataclass(frozen=True)
class TuningReport:
    m1: int
    m2: int
    delta: float
    regularity: str
    nn_distances: np.ndarray
    d_min: float
    percentile: Optional[float]
    factor: float

    def summary(self):
        d = self.nn_distances
        return {
            "m1": self.m1,
            "m2": self.m2,
            "delta": self.delta,
            "regularity": self.regularity,
            "d_min": self.d_min,
            "nn_quantiles": dict(zip(("min", "q25", "median", "q75", "max"), np.percentile(d, [0, 25, 50, 75, 100]).tolist())),
            "percentile": self.percentile,
            "factor": self.factor,
        }


def _round_even(x):
    return int(2 * np.floor(x / 2 + 0.5))


def enlargement_factor(nu):
    if nu <= 1:
        return 1.2
    if nu <= 2:
        return 1.3
    return 1.4


def is_regular(design) -> bool:
    d, _ = nearest_neighbor_distances(design)
    return float(np.std(d) / np.mean(d)) < REGULARITY_CV


def tune_defaults(design: SpatialDesign, regularity=None, nu=0.5) -> TuningReport:
    """Suggest (M1, M2, delta) for the auxiliary grid.

    Small regular grids get M1 and delta enlarged by 20-40% depending on
    smoothness. Regular grids with n >= 400, and regular grids under a
    non-constant mean, keep M1 = sqrt(n) and only take delta 10% above
    d_min. Irregular designs use a percentile of the nearest-neighbour
    distances for delta and size the grid to the region.
    """
    if design.n < 4:
        raise ValueError("need at least four locations")
    d, d_min = nearest_neighbor_distances(design)
    if regularity is None:
        regularity = "regular" if is_regular(design) else "irregular"
    if regularity not in ("regular", "irregular"):
        raise ValueError(f"unknown regularity {regularity!r}")
    lo, hi = design.bounding_box
    if regularity == "regular":
        root = np.sqrt(design.n)
        if design.n >= LARGE_GRID_N or design.p > 1:
            factor = 1.1
            m = max(_round_even(root), 4)
            delta = factor * d_min
        else:
            factor = enlargement_factor(nu)
            m = _round_even(root * factor)
            delta = factor * d_min
            if m < 4:
                m, delta, factor = 4, d_min, 1.0
        return TuningReport(m, m, float(delta), regularity, d, d_min, None, factor)
    delta = float(np.percentile(d, IRREGULAR_PERCENTILE))
    span = float(np.max(hi - lo))
    m = max(_round_even(np.ceil(span / delta) + 1.5), 4)
    return TuningReport(m, m, delta, regularity, d, d_min, IRREGULAR_PERCENTILE, 1.0)


def as_aux_grid(design_or_points, rtol=1e-6):
    """Recognize a complete regular lattice and return (AuxGrid, order).

    ``order`` permutes the design's sites into grid order (i outer, j
    inner), so ``z[order]`` lines up with the grid points. Both side counts
    must be even and the spacing equal in both directions.
    """
    pts = design_or_points.locations if isinstance(design_or_points, SpatialDesign) else np.asarray(design_or_points, float)
    n = pts.shape[0]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    _, d_min = nearest_neighbor_distances(pts)
    idx = np.rint((pts - lo) / d_min).astype(np.int64)
    if np.max(np.abs(idx * d_min + lo - pts)) > rtol * max(d_min, float(np.max(np.abs(hi - lo)))):
        raise ValueError("locations do not lie on a regular lattice")
    m1, m2 = int(idx[:, 0].max()) + 1, int(idx[:, 1].max()) + 1
    if m1 * m2 != n:
        raise ValueError(f"lattice of {m1}x{m2} sites is incomplete ({n} locations)")
    grid = build_aux_grid((lo, hi), m1, m2, d_min)
    order = np.argsort(idx[:, 0] * m2 + idx[:, 1], kind="stable")
    return grid, order
