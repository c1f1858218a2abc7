"""Random motion-and-detection examples.

Each example owns the counter stream (seed, k). Sampling always happens in
the same order and with the same number of draws for a given config:

    path magnitude (3), directions (3), intermediate fractions (3(n-2)),
    object size (2), initial depth (1), initial center fractions (2),
    reversal (1), camera noise (3(n-1), only if sigma_cam > 0),
    box noise (4n, only if sigma_box > 0),
    replacement flag, index and box (1 + 1 + 4, only if replace_prob > 0)

Batches are generated in fixed-size chunks of stream indices, so output does
not depend on how many worker threads produce them.
"""

import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .config import CameraIntrinsics, GenerationConfig, PerturbConfig, default_threads, initial_center_bounds
from .errors import InputError
from .geometry import (CameraPosition, Object3D, ObservationSet, denormalize_boxes, normalize_boxes,
                       project_boxes)
from .random_streams import DOMAIN_EXAMPLES, CounterStream

logger = logging.getLogger(__name__)

CHUNK_SIZE = 4096
MIN_NORMALIZED_SIZE = 1e-4

META_COLUMNS = ["W", "H", "X1", "Y1", "Z1", "reversed", "replaced", "stream"]


@dataclass(frozen=True)
class DepthExample:
    obs: ObservationSet
    label_z: float
    meta: Optional[Dict[str, Any]] = None

    def __post_init__(self):
        if not self.label_z > 0:
            raise InputError(f"Depth label must be positive, got {self.label_z}")


class ExampleBatch(Sequence):
    """Columnar storage for many examples sharing n and intrinsics.

    Indexing with an int yields a DepthExample, with a slice or index array
    another ExampleBatch.
    """

    def __init__(self, boxes: np.ndarray, positions: np.ndarray, labels: np.ndarray,
                 intrinsics: CameraIntrinsics, meta: Optional[pd.DataFrame] = None):
        boxes = np.ascontiguousarray(boxes, dtype=np.float64)
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        labels = np.ascontiguousarray(labels, dtype=np.float64)
        if boxes.ndim != 3 or boxes.shape[2] != 4:
            raise InputError(f"boxes must be (count, n, 4), got {boxes.shape}")
        if positions.shape != boxes.shape[:2] + (3,) or labels.shape != boxes.shape[:1]:
            raise InputError(f"inconsistent batch shapes {boxes.shape}, {positions.shape}, {labels.shape}")
        if boxes.shape[1] < 2:
            raise InputError(f"examples need n >= 2 observations, got {boxes.shape[1]}")
        if meta is not None and len(meta) != len(labels):
            raise InputError(f"meta has {len(meta)} rows for {len(labels)} examples")
        self.boxes = boxes
        self.positions = positions
        self.labels = labels
        self.intrinsics = intrinsics
        self.meta = meta.reset_index(drop=True) if meta is not None else None

    @property
    def n(self) -> int:
        return self.boxes.shape[1]

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            if index < 0:
                index += len(self)
            if not 0 <= index < len(self):
                raise IndexError(index)
            meta = None
            if self.meta is not None:
                meta = {k: v.item() if hasattr(v, "item") else v for k, v in self.meta.iloc[index].items()}
            return DepthExample(ObservationSet.from_arrays(self.boxes[index], self.positions[index]),
                                float(self.labels[index]), meta)
        selection = np.arange(len(self))[index]
        meta = self.meta.iloc[selection] if self.meta is not None else None
        return ExampleBatch(self.boxes[selection], self.positions[selection], self.labels[selection],
                            self.intrinsics, meta)

    @classmethod
    def concat(cls, batches: List["ExampleBatch"]) -> "ExampleBatch":
        if not batches:
            raise InputError("Cannot concatenate an empty list of batches")
        metas = [b.meta for b in batches]
        meta = pd.concat(metas, ignore_index=True) if all(m is not None for m in metas) else None
        return cls(np.concatenate([b.boxes for b in batches]),
                   np.concatenate([b.positions for b in batches]),
                   np.concatenate([b.labels for b in batches]),
                   batches[0].intrinsics, meta)

    @classmethod
    def from_examples(cls, examples: List[DepthExample], intrinsics: CameraIntrinsics) -> "ExampleBatch":
        if not examples:
            raise InputError("Cannot build a batch from zero examples")
        metas = [e.meta for e in examples]
        meta = pd.DataFrame(metas) if all(m is not None for m in metas) else None
        return cls(np.stack([e.obs.boxes() for e in examples]),
                   np.stack([e.obs.positions() for e in examples]),
                   np.array([e.label_z for e in examples]),
                   intrinsics, meta)


def sample_camera_paths(cfg: GenerationConfig, stream: CounterStream) -> np.ndarray:
    """(size, n, 3) camera positions, monotonic per axis, anchored at p_n = 0"""
    n = cfg.n
    magnitude = stream.uniform(3, cfg.dp_min, cfg.dp_max)
    signs = stream.rademacher(3)
    if cfg.direction_mode == "positive":
        signs = np.ones_like(signs)
    delta = magnitude * signs
    fractions = np.sort(stream.uniform(3 * (n - 2)).reshape(stream.size, n - 2, 3), axis=1)
    t = np.concatenate([np.zeros((stream.size, 1, 3)), fractions, np.ones((stream.size, 1, 3))], axis=1)
    # p_i = p_1 + t_i (p_n - p_1) with p_1 = -delta, p_n = 0
    paths = delta[:, None, :] * (t - 1.0)
    paths[:, -1, :] = 0.0
    return paths


def sample_camera_path(cfg: GenerationConfig, stream: CounterStream) -> List[CameraPosition]:
    _require_single(stream)
    return [CameraPosition(*map(float, p)) for p in sample_camera_paths(cfg, stream)[0]]


def sample_objects(cfg: GenerationConfig, stream: CounterStream):
    """Object sizes (size, 2) and initial centers (size, 3) at camera position p_1"""
    sizes = stream.uniform(2, cfg.s_min, cfg.s_max)
    z1 = stream.uniform(1, cfg.z1_min, cfg.z1_max)[:, 0]
    (x_lo, x_hi), (y_lo, y_hi) = initial_center_bounds(cfg, z1)
    u = stream.uniform(2)
    centers = np.stack([x_lo + (x_hi - x_lo) * u[:, 0], y_lo + (y_hi - y_lo) * u[:, 1], z1], axis=1)
    return sizes, centers


def sample_object(cfg: GenerationConfig, stream: CounterStream) -> Object3D:
    _require_single(stream)
    sizes, centers = sample_objects(cfg, stream)
    X, Y, Z = map(float, centers[0])
    return Object3D(X, Y, Z, float(sizes[0, 0]), float(sizes[0, 1]))


def perturb_camera(positions: np.ndarray, sigma_cam: float, stream: CounterStream) -> np.ndarray:
    """Gaussian noise on every camera position except the first"""
    if sigma_cam <= 0:
        return positions
    out = positions.copy()
    n = positions.shape[1]
    out[:, 1:, :] += stream.normal(3 * (n - 1), sigma_cam).reshape(stream.size, n - 1, 3)
    return out


def perturb_boxes(boxes: np.ndarray, sigma_box: float, replace_prob: float, stream: CounterStream,
                  perturb: Optional[PerturbConfig] = None):
    """Noise and random replacement on normalized (size, n, 4) boxes.

    Returns:
    - perturbed boxes and the replaced index per example (-1 when none)
    """
    perturb = perturb or PerturbConfig()
    size, n, _ = boxes.shape
    out = boxes
    replaced = np.full(size, -1, dtype=np.int64)
    if sigma_box > 0:
        out = boxes + stream.normal(4 * n, sigma_box).reshape(size, n, 4)
        out[:, :, 2:] = np.maximum(out[:, :, 2:], MIN_NORMALIZED_SIZE)
    if replace_prob > 0:
        hit = stream.bernoulli(1, replace_prob)[:, 0]
        index = stream.integers(1, n)[:, 0]
        lo_c, hi_c = perturb.replace_center_range
        lo_s, hi_s = perturb.replace_size_range
        u = stream.uniform(4)
        new_box = np.stack([lo_c + (hi_c - lo_c) * u[:, 0], lo_c + (hi_c - lo_c) * u[:, 1],
                            lo_s + (hi_s - lo_s) * u[:, 2], lo_s + (hi_s - lo_s) * u[:, 3]], axis=1)
        if out is boxes:
            out = boxes.copy()
        rows = np.nonzero(hit)[0]
        out[rows, index[rows], :] = new_box[rows]
        replaced[rows] = index[rows]
    return out, replaced


def _require_single(stream: CounterStream):
    if stream.size != 1:
        raise InputError(f"Expected a single stream, got {stream.size}")


def _generate_streams(cfg: GenerationConfig, stream: CounterStream) -> ExampleBatch:
    K = cfg.intrinsics
    paths = sample_camera_paths(cfg, stream)
    sizes, centers = sample_objects(cfg, stream)

    # Static object: camera-frame center moves opposite to the camera
    object_centers = centers[:, None, :] - (paths - paths[:, :1, :])
    boxes = project_boxes(object_centers, sizes[:, None, :], K)
    labels = object_centers[:, -1, 2].copy()

    reverse = stream.bernoulli(1, cfg.reverse_prob)[:, 0]
    if np.any(reverse):
        rows = np.nonzero(reverse)[0]
        flipped = paths[rows, ::-1, :]
        paths[rows] = flipped - flipped[:, -1:, :]
        boxes[rows] = boxes[rows, ::-1, :]
        labels[rows] = object_centers[rows, 0, 2]

    perturb = cfg.perturb
    paths = perturb_camera(paths, perturb.sigma_cam, stream)
    replaced = np.full(stream.size, -1, dtype=np.int64)
    if perturb.sigma_box > 0 or perturb.replace_prob > 0:
        normalized, replaced = perturb_boxes(normalize_boxes(boxes, K), perturb.sigma_box,
                                             perturb.replace_prob, stream, perturb)
        boxes = denormalize_boxes(normalized, K)

    meta = pd.DataFrame({
        "W": sizes[:, 0], "H": sizes[:, 1],
        "X1": centers[:, 0], "Y1": centers[:, 1], "Z1": centers[:, 2],
        "reversed": reverse, "replaced": replaced, "stream": stream.indices.astype(np.int64),
    })
    return ExampleBatch(boxes, paths, labels, K, meta)


def generate_example(cfg: GenerationConfig, stream: CounterStream) -> DepthExample:
    _require_single(stream)
    return _generate_streams(cfg, stream)[0]


def _generate_chunk(cfg: GenerationConfig, seed: int, first: int, count: int) -> ExampleBatch:
    indices = np.arange(first, first + count, dtype=np.uint64)
    return _generate_streams(cfg, CounterStream(seed, indices, DOMAIN_EXAMPLES))


def generate_batch(cfg: GenerationConfig, count: int, base_seed: Optional[int] = None, start: int = 0,
                   threads: Optional[int] = None) -> ExampleBatch:
    """Generate examples start .. start+count-1 of the stream family ``base_seed``.

    Args:
        cfg: generation distribution
        count: number of examples (>= 1)
        base_seed: stream seed, defaults to ``cfg.seed``
        start: index of the first stream
        threads: worker threads; output is identical for any value

    Returns:
        ExampleBatch with ``count`` examples
    """
    if count < 1:
        raise InputError(f"count must be >= 1, got {count}")
    seed = cfg.seed if base_seed is None else int(base_seed)
    threads = threads or default_threads()
    begin = time.perf_counter()

    bounds = [(first, min(CHUNK_SIZE, start + count - first)) for first in range(start, start + count, CHUNK_SIZE)]
    if threads == 1 or len(bounds) == 1:
        chunks = [_generate_chunk(cfg, seed, first, size) for first, size in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            chunks = list(executor.map(lambda b: _generate_chunk(cfg, seed, *b), bounds))
    batch = chunks[0] if len(chunks) == 1 else ExampleBatch.concat(chunks)

    elapsed = time.perf_counter() - begin
    logger.debug(f"Generated {count} examples of '{cfg.name}' (seed={seed}, start={start}) "
                 f"in {elapsed:.3f}s with {threads} threads")
    return batch
