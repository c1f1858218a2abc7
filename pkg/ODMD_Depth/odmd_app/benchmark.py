"""Benchmark sets, depth methods, evaluation and ensembling"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import ndimage

from .config import CameraIntrinsics, GenerationConfig, default_threads
from .errors import DomainError, InputError
from .generator import ExampleBatch, generate_batch
from .geometry import BoundingBox, CameraPosition, ObservationSet
from .network import NetworkParams, predict_batch
from .random_streams import DOMAIN_ENSEMBLE, CounterStream
from .solvers import box_ls_batch, endpoint_average_batch

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "odmd-gen/1"
EVAL_CHUNK = 1024


def percent_error(z, z_hat):
    """|Z - Ẑ| / Z * 100 for scalars or arrays; Z must be positive"""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise DomainError("percent error needs a positive ground-truth depth")
    result = np.abs(z - np.asarray(z_hat, dtype=np.float64)) / z * 100.0
    return float(result) if result.ndim == 0 else result


def absolute_error(z, z_hat):
    result = np.abs(np.asarray(z, dtype=np.float64) - np.asarray(z_hat, dtype=np.float64))
    return float(result) if result.ndim == 0 else result


def fill_missing_array(boxes: np.ndarray) -> Tuple[np.ndarray, List[int]]:
    """Replace NaN rows of an (n, 4) box array with the nearest detected row.

    Ties between an earlier and a later detection go to the earlier one.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    present = ~np.any(np.isnan(boxes), axis=1)
    detected = np.nonzero(present)[0]
    if detected.size == 0:
        raise InputError("cannot fill missing detections: no observation has a bounding box")
    missing = np.nonzero(~present)[0]
    filled = boxes.copy()
    for index in missing:
        # argmin returns the first minimum, i.e. the earlier detection on ties
        nearest = detected[np.argmin(np.abs(detected - index))]
        filled[index] = boxes[nearest]
    return filled, missing.tolist()


def fill_missing_detections(boxes: Sequence[Optional[BoundingBox]],
                            positions: Sequence[CameraPosition]) -> ObservationSet:
    if len(boxes) != len(positions):
        raise InputError(f"{len(boxes)} boxes for {len(positions)} camera positions")
    array = np.array([b.as_tuple() if b is not None else (np.nan,) * 4 for b in boxes], dtype=np.float64)
    filled, _ = fill_missing_array(array)
    return ObservationSet.from_arrays(filled, np.array([p.as_tuple() for p in positions]))


@dataclass(frozen=True)
class BinaryMask:
    """Foreground pixels (x, y) of a width x height image"""
    width: int
    height: int
    pixels: FrozenSet[Tuple[int, int]]

    def __post_init__(self):
        object.__setattr__(self, "pixels", frozenset(self.pixels))
        for x, y in self.pixels:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise InputError(f"mask pixel ({x}, {y}) outside {self.width}x{self.height} image")

    @classmethod
    def from_array(cls, array: np.ndarray) -> "BinaryMask":
        """From a (height, width) boolean image"""
        ys, xs = np.nonzero(np.asarray(array))
        return cls(array.shape[1], array.shape[0], frozenset(zip(xs.tolist(), ys.tolist())))

    def to_array(self) -> np.ndarray:
        image = np.zeros((self.height, self.width), dtype=bool)
        for x, y in self.pixels:
            image[y, x] = True
        return image


def mask_to_box(mask: BinaryMask, anchor: Optional[Tuple[float, float]] = None) -> BoundingBox:
    """Box around the mask fragment with the smallest (centroid distance to anchor) / pixel count.

    Fragments are 8-connected; ``anchor`` defaults to the image center. The
    box spans the fragment's pixels inclusively.
    """
    if not mask.pixels:
        raise InputError("cannot convert an empty mask to a bounding box")
    image = mask.to_array()
    labels, count = ndimage.label(image, structure=np.ones((3, 3), dtype=int))
    index = np.arange(1, count + 1)
    sizes = ndimage.sum_labels(image, labels, index)
    centroids = np.array(ndimage.center_of_mass(image, labels, index), dtype=np.float64).reshape(count, 2)
    if anchor is None:
        anchor = ((mask.width - 1) / 2.0, (mask.height - 1) / 2.0)
    # center_of_mass returns (row, col)
    offsets = np.hypot(centroids[:, 1] - anchor[0], centroids[:, 0] - anchor[1])
    best = int(np.argmin(offsets / sizes)) + 1
    ys, xs = np.nonzero(labels == best)
    x_min, x_max, y_min, y_max = xs.min(), xs.max(), ys.min(), ys.max()
    if count > 1:
        logger.debug(f"Mask has {count} fragments, kept fragment {best} ({int(sizes[best - 1])} px)")
    return BoundingBox((x_min + x_max) / 2.0, (y_min + y_max) / 2.0,
                       float(x_max - x_min + 1), float(y_max - y_min + 1))


class DepthMethod:
    """Something that predicts final-observation depth for batches of examples.

    ``fixed_n`` is the observation count the method requires, or None.
    """
    name = "method"
    fixed_n: Optional[int] = None

    def predict(self, boxes: np.ndarray, positions: np.ndarray,
                K: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class BoxLSMethod(DepthMethod):
    name = "box-ls"

    def predict(self, boxes, positions, K):
        sol = box_ls_batch(boxes, positions)
        return sol.z_hat, sol.ok


class EndpointMethod(DepthMethod):
    def __init__(self, cue: str):
        self.cue = cue
        self.name = f"{cue}-2obs"

    def predict(self, boxes, positions, K):
        sol = endpoint_average_batch(boxes, positions, self.cue, K)
        return sol.z_hat, sol.ok


class NetworkMethod(DepthMethod):
    def __init__(self, params: NetworkParams, zero_lateral: bool = False, name: str = "dbox"):
        self.params = params
        self.zero_lateral = zero_lateral
        self.fixed_n = params.n
        self.name = name

    def predict(self, boxes, positions, K):
        return predict_batch(self.params, boxes, positions, K, zero_lateral=self.zero_lateral)


class EnsembleMethod(DepthMethod):
    """Median over random order-preserving observation subsets of a base method"""

    def __init__(self, base: DepthMethod, trials: int, seed: int = 0):
        if trials < 1:
            raise InputError(f"ensemble needs trials >= 1, got {trials}")
        self.base = base
        self.trials = trials
        self.seed = seed
        self.fixed_n = base.fixed_n
        self.name = f"{base.name}+ensemble{trials}"

    def predict(self, boxes, positions, K, stream_offset: int = 0):
        return ensemble_batch(self.base, boxes, positions, K, self.trials, self.seed, stream_offset)


ANALYTIC_METHODS = {
    "box-ls": BoxLSMethod,
    "expansion-2obs": lambda: EndpointMethod("expansion"),
    "parallax-2obs": lambda: EndpointMethod("parallax"),
}


def build_method(name: str, params: Optional[NetworkParams] = None, zero_lateral: bool = False,
                 ensemble_trials: int = 1, seed: int = 0) -> DepthMethod:
    if name in ANALYTIC_METHODS:
        method = ANALYTIC_METHODS[name]()
    elif name == "dbox":
        if params is None:
            raise InputError("method 'dbox' needs a checkpoint")
        method = NetworkMethod(params, zero_lateral=zero_lateral)
    else:
        raise InputError(f"unknown method {name!r}; choose from {sorted(ANALYTIC_METHODS) + ['dbox']}")
    if ensemble_trials > 1:
        method = EnsembleMethod(method, ensemble_trials, seed)
    return method


def _subset_masks(count: int, n: int, trials: int, seed: int, offset: int) -> np.ndarray:
    """(count, trials, n) keep masks; trial 0 keeps everything, the last observation is always kept"""
    stream = CounterStream(seed, np.arange(offset, offset + count, dtype=np.uint64), DOMAIN_ENSEMBLE)
    u = stream.uniform(trials * (n - 1)).reshape(count, trials, n - 1)
    keep = u < 0.5
    first = np.argmin(u, axis=2)
    np.put_along_axis(keep, first[..., None], True, axis=2)
    masks = np.concatenate([keep, np.ones((count, trials, 1), dtype=bool)], axis=2)
    masks[:, 0, :] = True
    return masks


def ensemble_batch(method: DepthMethod, boxes: np.ndarray, positions: np.ndarray, K: CameraIntrinsics,
                   trials: int, seed: int = 0, stream_offset: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    count, n, _ = boxes.shape
    masks = _subset_masks(count, n, trials, seed, stream_offset)
    predictions = np.full((count, trials), np.nan)
    for trial in range(trials):
        trial_masks = masks[:, trial, :]
        if method.fixed_n is not None:
            # fixed-length models see dropped observations as missing detections
            trial_boxes = np.where(trial_masks[..., None], boxes, np.nan)
            for row in np.nonzero(~np.all(trial_masks, axis=1))[0]:
                trial_boxes[row] = fill_missing_array(trial_boxes[row])[0]
            z, ok = method.predict(trial_boxes, positions, K)
            predictions[:, trial] = np.where(ok, z, np.nan)
            continue
        patterns, inverse = np.unique(trial_masks, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        for p, pattern in enumerate(patterns):
            rows = np.nonzero(inverse == p)[0]
            z, ok = method.predict(boxes[rows][:, pattern], positions[rows][:, pattern], K)
            predictions[rows, trial] = np.where(ok, z, np.nan)
    ok = np.any(np.isfinite(predictions), axis=1)
    depth = np.full(count, np.nan)
    if np.any(ok):
        depth[ok] = np.nanmedian(predictions[ok], axis=1)
    return depth, ok


def ensemble_predict(method: DepthMethod, obs: ObservationSet, K: CameraIntrinsics, trials: int,
                     seed: int = 0, stream_index: int = 0) -> float:
    """Median prediction over ``trials`` random order-preserving subsets of ``obs``"""
    if trials < 1:
        raise InputError(f"ensemble needs trials >= 1, got {trials}")
    depth, ok = ensemble_batch(method, obs.boxes()[None], obs.positions()[None], K, trials, seed, stream_index)
    if not ok[0]:
        raise DomainError(f"every ensemble trial of {method.name} failed")
    return float(depth[0])


@dataclass
class BenchmarkSet:
    name: str
    split: str
    examples: ExampleBatch
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.examples)


def build_benchmark_set(cfg: GenerationConfig, name: str, split: str, seed: int, size: int,
                        threads: Optional[int] = None) -> BenchmarkSet:
    examples = generate_batch(cfg, size, seed, threads=threads)
    provenance = {"config": cfg.model_dump(mode="json"), "seed": seed, "generator_version": GENERATOR_VERSION}
    logger.info(f"Built benchmark set {name}/{split}: {size} examples (seed {seed})")
    return BenchmarkSet(name, split, examples, provenance)


STAT_NAMES = ("mean", "median", "min", "max", "std")


def summarize(values: np.ndarray) -> Dict[str, float]:
    """Mean, median, min, max and population standard deviation"""
    if values.size == 0:
        return {k: float("nan") for k in STAT_NAMES}
    return {
        "mean": float(np.mean(values)),
        "median": float(np.median(values)),
        "min": float(np.min(values)),
        "max": float(np.max(values)),
        "std": float(np.std(values)),
    }


@dataclass
class SetSummary:
    name: str
    split: str
    count: int
    failures: int
    percent: Dict[str, float]
    absolute: Dict[str, float]


@dataclass
class EvalReport:
    """Per-set statistics and per-example records for one method.

    ``records`` columns: set, index, label_z, prediction, ok, abs_error, pct_error.
    """
    method: str
    sets: List[SetSummary]
    records: pd.DataFrame
    all_sets_aggregate: float

    def summary_frame(self) -> pd.DataFrame:
        rows = []
        for s in self.sets:
            row = {"set": s.name, "split": s.split, "count": s.count, "failures": s.failures}
            row.update({f"pct_{k}": v for k, v in s.percent.items()})
            row.update({f"abs_{k}": v for k, v in s.absolute.items()})
            rows.append(row)
        return pd.DataFrame(rows)


def predict_examples(method: DepthMethod, examples: ExampleBatch,
                     threads: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Predictions for every example, computed in fixed chunks and reassembled in order"""
    if method.fixed_n is not None and method.fixed_n != examples.n:
        raise InputError(f"method {method.name} expects n={method.fixed_n}, set has n={examples.n}")
    bounds = [(start, min(start + EVAL_CHUNK, len(examples))) for start in range(0, len(examples), EVAL_CHUNK)]

    def run(bound):
        start, stop = bound
        boxes, positions = examples.boxes[start:stop], examples.positions[start:stop]
        if isinstance(method, EnsembleMethod):
            return method.predict(boxes, positions, examples.intrinsics, stream_offset=start)
        return method.predict(boxes, positions, examples.intrinsics)

    threads = threads or default_threads()
    if threads == 1 or len(bounds) == 1:
        results = [run(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(run, bounds))
    depth = np.concatenate([r[0] for r in results])
    ok = np.concatenate([r[1] for r in results]) & np.isfinite(depth)
    return depth, ok


def evaluate(method: DepthMethod, sets: Union[BenchmarkSet, Sequence[BenchmarkSet]],
             threads: Optional[int] = None) -> EvalReport:
    """Evaluate ``method`` on one or more benchmark sets.

    Failed (degenerate) examples are counted per set and excluded from the
    statistics. The all-sets aggregate is the unweighted mean of per-set mean
    percent errors.
    """
    if isinstance(sets, BenchmarkSet):
        sets = [sets]
    if not sets:
        raise InputError("evaluate needs at least one benchmark set")
    summaries, frames = [], []
    for bset in sets:
        begin = time.perf_counter()
        depth, ok = predict_examples(method, bset.examples, threads)
        labels = bset.examples.labels
        pct = np.where(ok, percent_error(labels, np.where(ok, depth, 0.0)), np.nan)
        abs_err = np.where(ok, absolute_error(labels, np.where(ok, depth, 0.0)), np.nan)
        failures = int(np.count_nonzero(~ok))
        summary = SetSummary(bset.name, bset.split, len(bset), failures, summarize(pct[ok]), summarize(abs_err[ok]))
        summaries.append(summary)
        frames.append(pd.DataFrame({
            "set": bset.name, "index": np.arange(len(bset)), "label_z": labels,
            "prediction": depth, "ok": ok, "abs_error": abs_err, "pct_error": pct,
        }))
        if failures:
            logger.warning(f"{method.name} on {bset.name}: {failures} degenerate examples excluded")
        logger.info(f"{method.name} on {bset.name}/{bset.split}: mean percent error "
                    f"{summary.percent['mean']:.4f} over {len(bset) - failures} examples "
                    f"({time.perf_counter() - begin:.2f}s)")
    aggregate = float(np.mean([s.percent["mean"] for s in summaries]))
    return EvalReport(method.name, summaries, pd.concat(frames, ignore_index=True), aggregate)
