"""Domain types and pinhole projection.

Positions are meters in the camera frame; boxes are continuous pixel
coordinates (center, width, height). Nothing here rounds to pixels.
"""

import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Tuple

import numpy as np

from .config import CameraIntrinsics
from .errors import DomainError, InputError


@dataclass(frozen=True)
class CameraPosition:
    cx: float
    cy: float
    cz: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.cz)):
            raise DomainError(f"Camera position must be finite, got {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.cx, self.cy, self.cz)

    def __sub__(self, other: "CameraPosition") -> Tuple[float, float, float]:
        return (self.cx - other.cx, self.cy - other.cy, self.cz - other.cz)


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DomainError(f"Bounding box needs w > 0 and h > 0, got w={self.w}, h={self.h}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Observation:
    box: BoundingBox
    position: CameraPosition

    def as_row(self) -> Tuple[float, ...]:
        return self.box.as_tuple() + self.position.as_tuple()


@dataclass(frozen=True)
class ObservationSet:
    """Ordered observations of one object; the last one is the query position"""
    observations: Tuple[Observation, ...]

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        if len(self.observations) < 2:
            raise InputError(f"An observation set needs n >= 2 observations, got {len(self.observations)}")

    @property
    def n(self) -> int:
        return len(self.observations)

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self) -> Iterator[Observation]:
        return iter(self.observations)

    def __getitem__(self, index: int) -> Observation:
        return self.observations[index]

    def boxes(self) -> np.ndarray:
        """(n, 4) array of x, y, w, h"""
        return np.array([o.box.as_tuple() for o in self.observations], dtype=np.float64)

    def positions(self) -> np.ndarray:
        """(n, 3) array of C_X, C_Y, C_Z"""
        return np.array([o.position.as_tuple() for o in self.observations], dtype=np.float64)

    def rows(self) -> np.ndarray:
        """(n, 7) array of x, y, w, h, C_X, C_Y, C_Z"""
        return np.concatenate([self.boxes(), self.positions()], axis=1)

    @classmethod
    def from_arrays(cls, boxes: np.ndarray, positions: np.ndarray) -> "ObservationSet":
        boxes = np.asarray(boxes, dtype=np.float64)
        positions = np.asarray(positions, dtype=np.float64)
        if boxes.ndim != 2 or boxes.shape[1] != 4 or positions.shape != (boxes.shape[0], 3):
            raise InputError(f"Expected (n, 4) boxes and (n, 3) positions, got {boxes.shape} and {positions.shape}")
        return cls(tuple(
            Observation(BoundingBox(*map(float, b)), CameraPosition(*map(float, p)))
            for b, p in zip(boxes, positions)
        ))

    def subset(self, indices: Sequence[int]) -> "ObservationSet":
        return ObservationSet(tuple(self.observations[i] for i in indices))

    def translated(self, offset: Tuple[float, float, float]) -> "ObservationSet":
        return ObservationSet.from_arrays(self.boxes(), self.positions() + np.asarray(offset, dtype=np.float64))


@dataclass(frozen=True)
class Object3D:
    """Fronto-parallel rectangle of physical size W x H centered at (X, Y, Z)"""
    X: float
    Y: float
    Z: float
    W: float
    H: float

    def __post_init__(self):
        if not (self.W > 0 and self.H > 0):
            raise DomainError(f"Object size must be positive, got W={self.W}, H={self.H}")


def project_point(point: Tuple[float, float, float], K: CameraIntrinsics) -> Tuple[float, float]:
    X, Y, Z = point
    if not Z > 0:
        raise DomainError(f"Cannot project a point with non-positive depth Z={Z}")
    return (K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy)


def project_box(obj: Object3D, K: CameraIntrinsics) -> BoundingBox:
    x, y = project_point((obj.X, obj.Y, obj.Z), K)
    return BoundingBox(x, y, K.fx * obj.W / obj.Z, K.fy * obj.H / obj.Z)


def displace_object(obj: Object3D, start: CameraPosition, end: CameraPosition) -> Object3D:
    """Object pose seen from ``end`` given its pose seen from ``start`` (static object)"""
    dx, dy, dz = end - start
    return Object3D(obj.X - dx, obj.Y - dy, obj.Z - dz, obj.W, obj.H)


def project_boxes(centers: np.ndarray, sizes: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized project_box.

    Parameters:
    - centers: (..., 3) object centers X, Y, Z
    - sizes: (..., 2) physical W, H broadcastable against centers

    Returns:
    - (..., 4) boxes x, y, w, h
    """
    Z = centers[..., 2]
    if np.any(Z <= 0):
        raise DomainError(f"Cannot project objects with non-positive depth (min Z={float(np.min(Z))})")
    out = np.empty(centers.shape[:-1] + (4,), dtype=np.float64)
    out[..., 0] = K.fx * centers[..., 0] / Z + K.cx
    out[..., 1] = K.fy * centers[..., 1] / Z + K.cy
    out[..., 2] = K.fx * sizes[..., 0] / Z
    out[..., 3] = K.fy * sizes[..., 1] / Z
    return out


def normalize_boxes(boxes: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Pixel boxes to image-relative units (x/W_I, y/H_I, w/W_I, h/H_I)"""
    scale = np.array([K.image_width, K.image_height, K.image_width, K.image_height], dtype=np.float64)
    return boxes / scale


def denormalize_boxes(boxes: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    scale = np.array([K.image_width, K.image_height, K.image_width, K.image_height], dtype=np.float64)
    return boxes * scale
