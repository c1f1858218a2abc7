"""Closed-form and least-squares object depth from observation sets.

Every estimator comes in two forms: a batched one over (count, n, 4) boxes
and (count, n, 3) positions that returns estimates plus a success mask, and
a per-example one over ObservationSet that raises DegenerateGeometry.
Observation indices are 0-based; -1 is the final (query) observation.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np

from .config import CameraIntrinsics
from .errors import DegenerateGeometry, InputError
from .geometry import Observation, ObservationSet

logger = logging.getLogger(__name__)

EPS_EXPAND = 1e-9
EPS_PARALLAX = 1e-9
RANK_RATIO = 1e-10

ScaleSource = Literal["width", "height"]
Axis = Literal["x", "y"]
Cue = Literal["expansion", "parallax"]


@dataclass(frozen=True)
class DepthSolution:
    z_hat: float
    aux_fxW: Optional[float] = None
    aux_fyH: Optional[float] = None
    condition: Optional[float] = None


@dataclass
class BatchSolution:
    """Batched solver output; entries where ``ok`` is False are NaN"""
    z_hat: np.ndarray
    ok: np.ndarray
    condition: np.ndarray
    aux: Optional[np.ndarray] = None


def _scale_column(scale_source: str) -> int:
    if scale_source not in ("width", "height"):
        raise InputError(f"scale_source must be 'width' or 'height', got {scale_source!r}")
    return 2 if scale_source == "width" else 3


def _pair_arrays(obs_i: Observation, obs_j: Observation):
    boxes = np.array([[obs_i.box.as_tuple(), obs_j.box.as_tuple()]])
    positions = np.array([[obs_i.position.as_tuple(), obs_j.position.as_tuple()]])
    return boxes, positions


def optical_expansion_batch(boxes: np.ndarray, positions: np.ndarray, i: int = -1, j: int = 0,
                            scale_source: ScaleSource = "width") -> BatchSolution:
    col = _scale_column(scale_source)
    ratio = boxes[:, i, col] / boxes[:, j, col]
    denom = 1.0 - ratio
    ok = np.abs(denom) >= EPS_EXPAND
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ok, (positions[:, j, 2] - positions[:, i, 2]) / np.where(ok, denom, 1.0), np.nan)
    return BatchSolution(z, ok, np.abs(denom))


def depth_optical_expansion(obs_i: Observation, obs_j: Observation,
                            scale_source: ScaleSource = "width") -> DepthSolution:
    """Depth at ``obs_i`` from the change in box scale between two observations.

    Raises DegenerateGeometry when the scale ratio is indistinguishable from 1.
    """
    boxes, positions = _pair_arrays(obs_i, obs_j)
    sol = optical_expansion_batch(boxes, positions, 0, 1, scale_source)
    if not sol.ok[0]:
        raise DegenerateGeometry(f"insufficient optical expansion ({scale_source} ratio change "
                                 f"{sol.condition[0]:.3g})", condition=float(sol.condition[0]))
    return DepthSolution(float(sol.z_hat[0]), condition=float(sol.condition[0]))


def motion_parallax_batch(boxes: np.ndarray, positions: np.ndarray, K: CameraIntrinsics, i: int = -1,
                          j: int = 0, axis: Axis = "x", scale_source: ScaleSource = "width") -> BatchSolution:
    if axis not in ("x", "y"):
        raise InputError(f"axis must be 'x' or 'y', got {axis!r}")
    col = _scale_column(scale_source)
    if axis == "x":
        f, c, center, pos = K.fx, K.cx, 0, 0
    else:
        f, c, center, pos = K.fy, K.cy, 1, 1
    ratio = boxes[:, i, col] / boxes[:, j, col]
    denom = (boxes[:, j, center] - c) * ratio - (boxes[:, i, center] - c)
    ok = np.abs(denom) >= EPS_PARALLAX
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ok, f * (positions[:, i, pos] - positions[:, j, pos]) / np.where(ok, denom, 1.0), np.nan)
    return BatchSolution(z, ok, np.abs(denom))


def depth_motion_parallax(obs_i: Observation, obs_j: Observation, K: CameraIntrinsics, axis: Axis = "x",
                          scale_source: ScaleSource = "width") -> DepthSolution:
    """Depth at ``obs_i`` from lateral (axis='x') or vertical (axis='y') parallax.

    The scale ratio between the observations corrects for any z-motion.
    """
    boxes, positions = _pair_arrays(obs_i, obs_j)
    sol = motion_parallax_batch(boxes, positions, K, 0, 1, axis, scale_source)
    if not sol.ok[0]:
        raise DegenerateGeometry(f"insufficient motion parallax along {axis} "
                                 f"(denominator {sol.condition[0]:.3g} px)", condition=float(sol.condition[0]))
    return DepthSolution(float(sol.z_hat[0]), condition=float(sol.condition[0]))


def box_ls_design(boxes: np.ndarray, positions: np.ndarray, query_index: int = -1) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked width/height rows [w_j, 1, 0], [h_j, 0, 1] and right-hand sides.

    Unknowns are (Z_i, -fx W, -fy H); row pair j states w_j Z_j = fx W with
    Z_j = Z_i - (C_Zj - C_Zi).
    """
    count, n, _ = boxes.shape
    dz = positions[:, :, 2] - positions[:, query_index, 2][:, None]
    A = np.zeros((count, 2 * n, 3), dtype=np.float64)
    A[:, 0::2, 0] = boxes[:, :, 2]
    A[:, 0::2, 1] = 1.0
    A[:, 1::2, 0] = boxes[:, :, 3]
    A[:, 1::2, 2] = 1.0
    b = np.empty((count, 2 * n), dtype=np.float64)
    b[:, 0::2] = boxes[:, :, 2] * dz
    b[:, 1::2] = boxes[:, :, 3] * dz
    return A, b


def box_ls_batch(boxes: np.ndarray, positions: np.ndarray, query_index: int = -1) -> BatchSolution:
    """Least-squares depth over all observations via QR of the stacked system"""
    A, b = box_ls_design(boxes, positions, query_index)
    singular = np.linalg.svd(A, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = singular[:, -1] / singular[:, 0]
        condition = singular[:, 0] / singular[:, -1]
    ok = np.isfinite(ratio) & (ratio >= RANK_RATIO)

    if not np.all(ok):
        A = A.copy()
        A[~ok] = 0.0
        A[~ok, 0, 0] = A[~ok, 1, 1] = A[~ok, 2, 2] = 1.0
    Q, R = np.linalg.qr(A)
    qtb = np.einsum("bij,bi->bj", Q, b)
    x = np.linalg.solve(R, qtb[..., None])[..., 0]
    x[~ok] = np.nan
    aux = -x[:, 1:]
    return BatchSolution(x[:, 0], ok, condition, aux)


def depth_box_ls(obs: ObservationSet, query_index: int = -1) -> DepthSolution:
    sol = box_ls_batch(obs.boxes()[None], obs.positions()[None], query_index)
    if not sol.ok[0]:
        raise DegenerateGeometry(f"Box_LS system is rank deficient (condition {sol.condition[0]:.3g}); "
                                 f"camera needs z-motion that changes box scale", condition=float(sol.condition[0]))
    return DepthSolution(float(sol.z_hat[0]), float(sol.aux[0, 0]), float(sol.aux[0, 1]), float(sol.condition[0]))


def endpoint_average_batch(boxes: np.ndarray, positions: np.ndarray, cue: Cue = "expansion",
                           K: Optional[CameraIntrinsics] = None) -> BatchSolution:
    """Average of the two variants of a two-observation cue at (i = n, j = 1).

    ``condition`` holds how many variants contributed (2, 1 or 0).
    """
    if cue == "expansion":
        first = optical_expansion_batch(boxes, positions, -1, 0, "width")
        second = optical_expansion_batch(boxes, positions, -1, 0, "height")
    elif cue == "parallax":
        if K is None:
            raise InputError("Motion parallax needs camera intrinsics")
        first = motion_parallax_batch(boxes, positions, K, -1, 0, "x", "width")
        second = motion_parallax_batch(boxes, positions, K, -1, 0, "y", "height")
    else:
        raise InputError(f"cue must be 'expansion' or 'parallax', got {cue!r}")
    used = first.ok.astype(np.float64) + second.ok.astype(np.float64)
    total = np.where(first.ok, first.z_hat, 0.0) + np.where(second.ok, second.z_hat, 0.0)
    ok = used > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ok, total / np.where(ok, used, 1.0), np.nan)
    return BatchSolution(z, ok, used)


def depth_endpoint_average(obs: ObservationSet, cue: Cue = "expansion",
                           K: Optional[CameraIntrinsics] = None) -> DepthSolution:
    sol = endpoint_average_batch(obs.boxes()[None], obs.positions()[None], cue, K)
    if not sol.ok[0]:
        raise DegenerateGeometry(f"both {cue} variants are degenerate between the endpoint observations",
                                 condition=0.0)
    if sol.condition[0] < 2:
        logger.debug(f"Endpoint {cue}: one variant degenerate, using the other")
    return DepthSolution(float(sol.z_hat[0]), condition=float(sol.condition[0]))
