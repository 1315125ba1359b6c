import logging
import math
from abc import ABC, abstractmethod
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from config.config import Config
from .exceptions import ConfigError, DimensionError, DomainError

logger = logging.getLogger(__name__)


class Point(BaseModel):
    """An element of finite-dimensional real space with the Euclidean norm."""
    model_config = ConfigDict(frozen=True)

    coords: Tuple[float, ...]

    @field_validator('coords', mode='before')
    @classmethod
    def coerce_coords(cls, v):
        if isinstance(v, (int, float)):
            return (float(v),)
        return tuple(float(c) for c in np.ravel(np.asarray(v, dtype=float)))

    @field_validator('coords')
    @classmethod
    def check_coords(cls, v):
        if len(v) == 0:
            raise ValueError("A point needs at least one coordinate")
        if not all(math.isfinite(c) for c in v):
            raise ValueError(f"Coordinates must be finite, got {v}")
        return v

    @classmethod
    def of(cls, *values: float) -> "Point":
        return cls(coords=values)

    @classmethod
    def from_array(cls, arr) -> "Point":
        return cls(coords=arr)

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)

    def __getitem__(self, i: int) -> float:
        return self.coords[i]


def as_array(x) -> np.ndarray:
    """Accept a Point, scalar or sequence and return a 1-D float array."""
    if isinstance(x, Point):
        return x.array
    return np.atleast_1d(np.asarray(x, dtype=float)).ravel()


def _check_dim(expected: int, actual: int) -> None:
    if expected != actual:
        raise DimensionError(expected, actual)


class Region(ABC):
    """A closed region of R^dim with an exact nearest-point projection."""

    kind = "region"

    @property
    @abstractmethod
    def dim(self) -> int:
        ...

    @abstractmethod
    def contains_batch(self, X: np.ndarray, tol: float = 0.0) -> np.ndarray:
        ...

    @abstractmethod
    def project_batch(self, X: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def bounding_box(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        ...

    @abstractmethod
    def describe(self) -> dict:
        ...

    def contains(self, x, tol: float = 0.0) -> bool:
        arr = as_array(x)
        _check_dim(self.dim, arr.size)
        return bool(self.contains_batch(arr[None, :], tol)[0])

    def project(self, x) -> np.ndarray:
        arr = as_array(x)
        _check_dim(self.dim, arr.size)
        return self.project_batch(arr[None, :])[0]

    def violation(self, x: np.ndarray) -> DomainError:
        return DomainError(f"Point {x.tolist()} lies outside {self.describe()}")

    def clamp(self, x, tol: Optional[float] = None) -> np.ndarray:
        """Return x itself, its projection when within tol of the region, or raise."""
        tol = Config.TAU_DOM if tol is None else tol
        arr = as_array(x)
        _check_dim(self.dim, arr.size)
        if self.contains(arr):
            return arr
        if self.contains(arr, tol):
            logger.debug(f"Clamping {arr.tolist()} onto {self.kind}")
            return self.project_batch(arr[None, :])[0]
        raise self.violation(arr)


class Box(Region):
    """Axis-aligned box lo <= x <= hi; a 1-D box is an interval."""

    kind = "box"

    def __init__(self, lo, hi):
        self.lo = as_array(lo)
        self.hi = as_array(hi)
        if self.lo.size != self.hi.size:
            raise DimensionError(self.lo.size, self.hi.size)
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ConfigError("Box bounds must be finite", [{"field": "lo/hi", "message": "non-finite bound"}])
        if np.any(self.lo > self.hi):
            raise ConfigError(
                f"Box requires lo <= hi componentwise, got lo={self.lo.tolist()} hi={self.hi.tolist()}",
                [{"field": "lo/hi", "message": "lo > hi"}],
            )
        if self.lo.size == 1:
            self.kind = "interval"

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains_batch(self, X: np.ndarray, tol: float = 0.0) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.lo - tol) & (X <= self.hi + tol), axis=1)

    def project_batch(self, X: np.ndarray) -> np.ndarray:
        return np.clip(np.atleast_2d(X), self.lo, self.hi)

    def bounding_box(self):
        return self.lo, self.hi

    def violation(self, x: np.ndarray) -> DomainError:
        outside = np.flatnonzero((x < self.lo) | (x > self.hi))
        i = int(outside[0])
        return DomainError(
            f"Coordinate {i} = {x[i]!r} outside [{self.lo[i]!r}, {self.hi[i]!r}]",
            coordinate=i,
            value=float(x[i]),
        )

    def describe(self) -> dict:
        if self.dim == 1:
            return {"kind": "interval", "lo": float(self.lo[0]), "hi": float(self.hi[0])}
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


def interval(lo: float, hi: float) -> Box:
    return Box([lo], [hi])


class MapDescriptor(ABC):
    """
    A self-map T of a region.

    Subclasses implement ``apply`` on a batch of rows without domain checks;
    ``evaluate`` is the checked single-point entry point.
    """

    kind = "map"

    def __init__(self, domain: Region, name: Optional[str] = None):
        self.domain = domain
        self.name = name or self.kind

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def codomain(self) -> Region:
        return self.domain

    @property
    def breakpoints(self) -> List[float]:
        return []

    def cases(self, X: np.ndarray) -> np.ndarray:
        """Label of the piece each row falls in; constant for single-piece maps."""
        return np.zeros(np.atleast_2d(X).shape[0], dtype=int)

    @abstractmethod
    def apply(self, X: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def describe(self) -> dict:
        ...

    def evaluate(self, x, tol: Optional[float] = None) -> Point:
        arr = self.domain.clamp(x, tol)
        return Point.from_array(self.apply(arr[None, :])[0])

    def __call__(self, x) -> Point:
        return self.evaluate(x)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class AffineMap(MapDescriptor):
    """x -> A x + c."""

    kind = "affine"

    def __init__(self, A, c, domain: Region, name: Optional[str] = None):
        super().__init__(domain, name)
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.c = as_array(c)
        if self.A.shape != (domain.dim, domain.dim):
            raise DimensionError(domain.dim, self.A.shape[0])
        _check_dim(domain.dim, self.c.size)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(X) @ self.A.T + self.c

    def describe(self) -> dict:
        return {"kind": self.kind, "name": self.name, "A": self.A.tolist(), "c": self.c.tolist(),
                "domain": self.domain.describe()}


class PiecewiseAffine1D(MapDescriptor):
    """
    Piecewise affine map of an interval.

    Piece i covers [breakpoints[i-1], breakpoints[i]) and maps x to
    slopes[i] * x + intercepts[i]; the last piece is closed on the right.
    """

    kind = "piecewise-1d"

    def __init__(self, breakpoints: Sequence[float], slopes: Sequence[float],
                 intercepts: Sequence[float], domain: Box, name: Optional[str] = None):
        super().__init__(domain, name)
        if domain.dim != 1:
            raise DimensionError(1, domain.dim)
        self._breakpoints = np.asarray(breakpoints, dtype=float)
        self.slopes = np.asarray(slopes, dtype=float)
        self.intercepts = np.asarray(intercepts, dtype=float)
        if np.any(np.diff(self._breakpoints) <= 0):
            raise ConfigError("Breakpoints must be strictly increasing",
                              [{"field": "breakpoints", "message": str(list(breakpoints))}])
        pieces = self._breakpoints.size + 1
        if self.slopes.size != pieces or self.intercepts.size != pieces:
            raise ConfigError(
                f"{self._breakpoints.size} breakpoints need {pieces} pieces",
                [{"field": "slopes/intercepts", "message": "piece count mismatch"}],
            )

    @property
    def breakpoints(self) -> List[float]:
        return self._breakpoints.tolist()

    def cases(self, X: np.ndarray) -> np.ndarray:
        return np.searchsorted(self._breakpoints, np.atleast_2d(X)[:, 0], side='right')

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        k = self.cases(X)
        return (self.slopes[k] * X[:, 0] + self.intercepts[k])[:, None]

    def piece_fixed_points(self) -> List[float]:
        """Exact fixed points of each affine piece that fall inside the piece."""
        lo, hi = float(self.domain.lo[0]), float(self.domain.hi[0])
        edges = [lo] + self.breakpoints + [hi]
        found = []
        for i, (s, q) in enumerate(zip(self.slopes, self.intercepts)):
            if s == 1.0:
                continue
            x = q / (1.0 - s)
            last = i == len(self.slopes) - 1
            if edges[i] <= x and (x < edges[i + 1] or (last and x <= edges[i + 1])):
                found.append(float(x))
        return found

    def describe(self) -> dict:
        return {"kind": self.kind, "name": self.name, "breakpoints": self.breakpoints,
                "slopes": self.slopes.tolist(), "intercepts": self.intercepts.tolist(),
                "domain": self.domain.describe()}


def _piecewise_gallery() -> MapDescriptor:
    return PiecewiseAffine1D([2.0 / 3.0], [-1.0, -1.0], [1.0, 2.0], interval(0.0, 4.0 / 3.0),
                             name="ex2-piecewise")


GALLERY: Dict[str, Callable[[], MapDescriptor]] = {
    "ex2-piecewise": _piecewise_gallery,
    "identity-01": lambda: AffineMap([[1.0]], [0.0], interval(0.0, 1.0), name="identity-01"),
    "halving-01": lambda: AffineMap([[0.5]], [0.0], interval(0.0, 1.0), name="halving-01"),
    "constant-01": lambda: AffineMap([[0.0]], [0.5], interval(0.0, 1.0), name="constant-01"),
}


def gallery_map(map_id: str, A=None, c=None, lo=None, hi=None) -> MapDescriptor:
    """Look up a map by its stable id; "affine" builds x -> A x + c on the box [lo, hi]."""
    if map_id == "affine":
        if A is None or c is None or lo is None or hi is None:
            raise ConfigError("Affine maps need A, c, lo and hi",
                              [{"field": "map", "message": "missing affine coefficients"}])
        return AffineMap(A, c, Box(lo, hi), name="affine")
    if map_id not in GALLERY:
        raise ConfigError(
            f"Unknown map id '{map_id}'. Known ids: {sorted(GALLERY) + ['affine']}",
            [{"field": "map.id", "message": map_id}],
        )
    return GALLERY[map_id]()


def evaluate(map: MapDescriptor, x, tol: Optional[float] = None) -> Point:
    return map.evaluate(x, tol)


def evaluate_batch(map: MapDescriptor, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, map.dim)
    _check_dim(map.dim, X.shape[1])
    return map.apply(X)


def distance(x, y) -> float:
    xa, ya = as_array(x), as_array(y)
    _check_dim(xa.size, ya.size)
    return float(np.linalg.norm(xa - ya))


def residual(map: MapDescriptor, x, tol: Optional[float] = None) -> float:
    arr = map.domain.clamp(x, tol)
    return float(np.linalg.norm(arr - map.apply(arr[None, :])[0]))


def grid_points(region: Region, step: float, max_points: Optional[int] = None,
                extra: Optional[Iterable] = None) -> np.ndarray:
    """
    Regular grid over a bounded region, rows sorted and unique.

    Grids with more than max_points points are coarsened uniformly. Extra
    points (breakpoints, probes) are added when they lie in the region.
    """
    if step is None or not step > 0:
        raise ConfigError(f"Grid step must be positive, got {step}", [{"field": "grid_step", "message": str(step)}])
    box = region.bounding_box()
    if box is None:
        raise ConfigError(f"Cannot grid the unbounded region {region.describe()}",
                          [{"field": "domain", "message": "unbounded"}])
    lo, hi = box
    max_points = max_points or Config.MAX_GRID_POINTS
    counts = np.floor((hi - lo) / step + 1e-9).astype(int) + 1
    if np.prod(counts.astype(float)) > max_points:
        per_dim = max(2, int(max_points ** (1.0 / region.dim)))
        logger.warning(
            f"Grid step {step} gives {int(np.prod(counts.astype(float)))} points, coarsening to {per_dim} per axis"
        )
        axes = [np.linspace(l, h, per_dim if h > l else 1) for l, h in zip(lo, hi)]
    else:
        axes = []
        for l, h, n in zip(lo, hi, counts):
            axis = l + step * np.arange(n)
            # the last node may land a rounding error past h or short of it
            if h - axis[-1] > 1e-12:
                axis = np.append(axis, h)
            else:
                axis[-1] = h
            axes.append(axis)
    mesh = np.meshgrid(*axes, indexing='ij')
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    if extra is not None:
        extra_rows = np.asarray(list(extra), dtype=float).reshape(-1, region.dim)
        if extra_rows.size:
            pts = np.vstack([pts, extra_rows])
    pts = pts[region.contains_batch(pts)]
    return np.unique(pts, axis=0)


def fixed_point_set(map: MapDescriptor, step: float = 1e-3, tol: Optional[float] = None) -> List[Point]:
    """
    Fixed points found on a grid of the domain, merged with exact fixed points
    of the affine pieces. Candidates closer than 1e-9 are reported once.
    """
    tol = Config.TAU_FIX if tol is None else tol
    candidates = []
    if isinstance(map, PiecewiseAffine1D):
        candidates.extend([x] for x in map.piece_fixed_points())
    elif isinstance(map, AffineMap):
        try:
            x = np.linalg.solve(np.eye(map.dim) - map.A, map.c)
            if map.domain.contains(x):
                candidates.append(x.tolist())
        except np.linalg.LinAlgError:
            pass
    X = grid_points(map.domain, step)
    res = np.linalg.norm(X - map.apply(X), axis=1)
    for row in X[res <= tol]:
        candidates.append(row.tolist())
    found: List[np.ndarray] = []
    for cand in candidates:
        arr = np.asarray(cand, dtype=float)
        if np.linalg.norm(arr - map.apply(arr[None, :])[0]) > tol:
            continue
        if any(np.linalg.norm(arr - f) <= 1e-9 for f in found):
            continue
        found.append(arr)
    found.sort(key=lambda a: tuple(a))
    return [Point.from_array(f) for f in found]


__all__ = [
    'Point', 'Region', 'Box', 'interval', 'MapDescriptor', 'AffineMap', 'PiecewiseAffine1D',
    'GALLERY', 'gallery_map', 'evaluate', 'evaluate_batch', 'distance', 'residual',
    'grid_points', 'fixed_point_set', 'as_array',
]
