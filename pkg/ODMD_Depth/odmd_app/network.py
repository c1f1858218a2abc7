"""DBox depth regressor: a peephole LSTM over normalized observations with a
fully-connected head that sees the whole flattened input at every layer.

Gate order in the stacked LSTM tensors is [input, forget, candidate, output].
Input and forget peepholes read c_{t-1}; the output peephole reads c_t.
The flattened input X̄ (7n values) is observation-major.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import CameraIntrinsics, LossMode
from .errors import CompatibilityError, ContractError, DegenerateGeometry, InputError
from .geometry import ObservationSet, normalize_boxes
from .random_streams import DOMAIN_INIT, CounterStream

logger = logging.getLogger(__name__)

FEATURES = 7
EPS_RANGE = 1e-6
FLATTEN_ORDER = "observation-major"


def tensor_names(fc_layers: int) -> List[str]:
    names = ["lstm.W_x", "lstm.W_h", "lstm.b", "lstm.peep_i", "lstm.peep_f", "lstm.peep_o"]
    for k in range(fc_layers):
        names += [f"fc{k}.W", f"fc{k}.b"]
    return names + ["out.W", "out.b"]


class NetworkParams:
    """Named weight tensors for a network with fixed n, hidden size and FC head"""

    def __init__(self, n: int, loss_mode: LossMode = "rel", hidden_size: int = 128, fc_width: int = 256,
                 fc_layers: int = 6, tensors: Optional[Dict[str, np.ndarray]] = None, dtype=np.float32):
        if n < 2:
            raise ContractError(f"network needs n >= 2, got {n}")
        if loss_mode not in ("rel", "abs"):
            raise InputError(f"loss mode must be 'rel' or 'abs', got {loss_mode!r}")
        self.n = n
        self.loss_mode = loss_mode
        self.hidden_size = hidden_size
        self.fc_width = fc_width
        self.fc_layers = fc_layers
        shapes = self.shapes()
        if tensors is None:
            tensors = {name: np.zeros(shape, dtype=dtype) for name, shape in shapes.items()}
        self.tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, shape in shapes.items():
            if name not in tensors:
                raise ContractError(f"missing tensor {name}")
            value = np.asarray(tensors[name], dtype=dtype)
            if value.shape != shape:
                raise ContractError(f"tensor {name} has shape {value.shape}, expected {shape}")
            self.tensors[name] = value
        extra = set(tensors) - set(shapes)
        if extra:
            raise ContractError(f"unexpected tensors {sorted(extra)}")

    def shapes(self) -> "OrderedDict[str, Tuple[int, ...]]":
        H, F, flat = self.hidden_size, self.fc_width, FEATURES * self.n
        shapes = OrderedDict()
        shapes["lstm.W_x"] = (FEATURES, 4 * H)
        shapes["lstm.W_h"] = (H, 4 * H)
        shapes["lstm.b"] = (4 * H,)
        for gate in ("i", "f", "o"):
            shapes[f"lstm.peep_{gate}"] = (H,)
        for k in range(self.fc_layers):
            shapes[f"fc{k}.W"] = ((H if k == 0 else F) + flat, F)
            shapes[f"fc{k}.b"] = (F,)
        shapes["out.W"] = (F, 1)
        shapes["out.b"] = (1,)
        return shapes

    @property
    def dtype(self):
        return self.tensors["out.b"].dtype

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def like(self, tensors: Dict[str, np.ndarray]) -> "NetworkParams":
        return NetworkParams(self.n, self.loss_mode, self.hidden_size, self.fc_width, self.fc_layers,
                             tensors, dtype=self.dtype)

    def zeros_like(self) -> Dict[str, np.ndarray]:
        return OrderedDict((k, np.zeros_like(v)) for k, v in self.tensors.items())

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.n, self.loss_mode, self.hidden_size, self.fc_width, self.fc_layers,
                             self.tensors, dtype=dtype)

    def copy(self) -> "NetworkParams":
        return self.like({k: v.copy() for k, v in self.tensors.items()})

    def count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def init_params(n: int, loss_mode: LossMode = "rel", seed: int = 0, hidden_size: int = 128,
                fc_width: int = 256, fc_layers: int = 6, dtype=np.float32) -> NetworkParams:
    """Glorot-uniform weights, zero biases and peepholes, forget-gate bias 1"""
    params = NetworkParams(n, loss_mode, hidden_size, fc_width, fc_layers, dtype=np.float64)
    tensors = params.zeros_like()
    for index, (name, shape) in enumerate(params.shapes().items()):
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            stream = CounterStream(seed, index, DOMAIN_INIT)
            tensors[name] = stream.uniform(shape[0] * shape[1], -limit, limit).reshape(shape)
    tensors["lstm.b"][hidden_size:2 * hidden_size] = 1.0
    return params.like(tensors).astype(dtype)


@dataclass
class NormalizedObservationSet:
    rows: np.ndarray
    scale: float


@dataclass
class NormalizedBatch:
    """Network-ready inputs for many examples.

    ``targets`` are in network units (depth / scale for rel, meters for abs);
    ``valid`` is False where rel normalization was degenerate.
    """
    inputs: np.ndarray
    scale: np.ndarray
    valid: np.ndarray
    targets: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


def normalize_batch(boxes: np.ndarray, positions: np.ndarray, K: CameraIntrinsics, mode: LossMode,
                    labels: Optional[np.ndarray] = None, zero_lateral: bool = False,
                    dtype=np.float32) -> NormalizedBatch:
    if mode not in ("rel", "abs"):
        raise InputError(f"loss mode must be 'rel' or 'abs', got {mode!r}")
    positions = np.array(positions, dtype=np.float64)
    if zero_lateral:
        positions[:, :, :2] = 0.0
    count, n, _ = boxes.shape
    inputs = np.empty((count, n, FEATURES), dtype=np.float64)
    inputs[:, :, :4] = normalize_boxes(boxes, K)
    if mode == "rel":
        scale = np.linalg.norm(positions[:, -1, :] - positions[:, 0, :], axis=1)
        valid = scale > EPS_RANGE
        safe = np.where(valid, scale, 1.0)
        inputs[:, 0, 4:] = 0.0
        inputs[:, 1:, 4:] = (positions[:, 1:, :] - positions[:, :-1, :]) / safe[:, None, None]
    else:
        scale = np.ones(count, dtype=np.float64)
        valid = np.ones(count, dtype=bool)
        inputs[:, :, 4:] = positions - positions[:, -1:, :]
    targets = None
    if labels is not None:
        targets = np.asarray(labels, dtype=np.float64) / np.where(valid, scale, 1.0)
        targets = targets.astype(dtype)
    return NormalizedBatch(inputs.astype(dtype), scale, valid, targets)


def normalize(obs: ObservationSet, K: CameraIntrinsics, mode: LossMode = "rel") -> NormalizedObservationSet:
    batch = normalize_batch(obs.boxes()[None], obs.positions()[None], K, mode, dtype=np.float64)
    if not batch.valid[0]:
        raise DegenerateGeometry(f"camera movement range {batch.scale[0]:.3g} m is below {EPS_RANGE} m",
                                 condition=float(batch.scale[0]))
    return NormalizedObservationSet(batch.inputs[0], float(batch.scale[0]))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _check_inputs(params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    if inputs.ndim == 2:
        inputs = inputs[None]
    if inputs.ndim != 3 or inputs.shape[1:] != (params.n, FEATURES):
        raise ContractError(f"network built for inputs (batch, {params.n}, {FEATURES}), got {inputs.shape}")
    return inputs.astype(params.dtype, copy=False)


def _lstm_forward(params: NetworkParams, inputs: np.ndarray, keep_cache: bool):
    p = params.tensors
    H = params.hidden_size
    count, n, _ = inputs.shape
    h = np.zeros((count, H), dtype=params.dtype)
    c = np.zeros((count, H), dtype=params.dtype)
    hidden, cache = [], []
    for t in range(n):
        x = inputs[:, t, :]
        a = x @ p["lstm.W_x"] + h @ p["lstm.W_h"] + p["lstm.b"]
        a_i = a[:, :H] + c * p["lstm.peep_i"]
        a_f = a[:, H:2 * H] + c * p["lstm.peep_f"]
        gate_i = _sigmoid(a_i)
        gate_f = _sigmoid(a_f)
        gate_g = np.tanh(a[:, 2 * H:3 * H])
        c_next = gate_f * c + gate_i * gate_g
        gate_o = _sigmoid(a[:, 3 * H:] + c_next * p["lstm.peep_o"])
        tanh_c = np.tanh(c_next)
        h_next = gate_o * tanh_c
        if keep_cache:
            cache.append((x, h, c, gate_i, gate_f, gate_g, gate_o, c_next, tanh_c))
        h, c = h_next, c_next
        hidden.append(h)
    return hidden, cache


def _head_forward(params: NetworkParams, h: np.ndarray, flat: np.ndarray, keep_cache: bool):
    p = params.tensors
    act = h
    cache = []
    for k in range(params.fc_layers):
        layer_in = np.concatenate([act, flat], axis=1)
        z = layer_in @ p[f"fc{k}.W"] + p[f"fc{k}.b"]
        act = np.maximum(z, 0)
        if keep_cache:
            cache.append((layer_in, z))
    out = (act @ p["out.W"])[:, 0] + p["out.b"][0]
    return out, act, cache


def forward(params: NetworkParams, inputs: np.ndarray, all_steps: bool = True) -> np.ndarray:
    """Per-step outputs f_1..f_n, shape (batch, n); with ``all_steps=False`` only f_n, shape (batch,)"""
    inputs = _check_inputs(params, inputs)
    flat = inputs.reshape(inputs.shape[0], -1)
    hidden, _ = _lstm_forward(params, inputs, keep_cache=False)
    if not all_steps:
        return _head_forward(params, hidden[-1], flat, False)[0]
    return np.stack([_head_forward(params, h, flat, False)[0] for h in hidden], axis=1)


@dataclass
class LossResult:
    loss: float
    residuals: np.ndarray
    valid: np.ndarray


def _require_targets(batch: NormalizedBatch):
    if batch.targets is None:
        raise InputError("batch has no targets")
    if len(batch) == 0:
        raise InputError("batch is empty")
    if not np.any(batch.valid):
        raise DegenerateGeometry("every example in the batch has a degenerate movement range")


def loss(params: NetworkParams, batch: NormalizedBatch) -> LossResult:
    """Mean squared residual target - f_n over the valid examples"""
    _require_targets(batch)
    f_n = forward(params, batch.inputs, all_steps=False)
    residuals = np.where(batch.valid, batch.targets - f_n, 0).astype(params.dtype)
    valid_count = int(np.count_nonzero(batch.valid))
    return LossResult(float(np.sum(residuals.astype(np.float64) ** 2) / valid_count), residuals, batch.valid)


def backward(params: NetworkParams, batch: NormalizedBatch) -> Tuple[LossResult, Dict[str, np.ndarray]]:
    """Loss and exact gradient with respect to every tensor (backpropagation through time)"""
    _require_targets(batch)
    p = params.tensors
    H = params.hidden_size
    inputs = _check_inputs(params, batch.inputs)
    count = inputs.shape[0]
    flat = inputs.reshape(count, -1)

    hidden, lstm_cache = _lstm_forward(params, inputs, keep_cache=True)
    f_n, last_act, head_cache = _head_forward(params, hidden[-1], flat, keep_cache=True)
    residuals = np.where(batch.valid, batch.targets - f_n, 0).astype(params.dtype)
    valid_count = int(np.count_nonzero(batch.valid))
    result = LossResult(float(np.sum(residuals.astype(np.float64) ** 2) / valid_count), residuals, batch.valid)

    grads = params.zeros_like()
    d_out = (-2.0 / valid_count) * residuals
    grads["out.W"] = (last_act.T @ d_out)[:, None]
    grads["out.b"] = np.array([d_out.sum()], dtype=params.dtype)
    d_act = d_out[:, None] * p["out.W"][:, 0][None, :]
    for k in reversed(range(params.fc_layers)):
        layer_in, z = head_cache[k]
        dz = d_act * (z > 0)
        grads[f"fc{k}.W"] = layer_in.T @ dz
        grads[f"fc{k}.b"] = dz.sum(axis=0)
        d_in = dz @ p[f"fc{k}.W"].T
        d_act = d_in[:, :d_in.shape[1] - flat.shape[1]]

    dh = d_act
    dc = np.zeros_like(dh)
    for t in reversed(range(params.n)):
        x, h_prev, c_prev, gate_i, gate_f, gate_g, gate_o, c, tanh_c = lstm_cache[t]
        da_o = dh * tanh_c * gate_o * (1 - gate_o)
        dc = dc + dh * gate_o * (1 - tanh_c ** 2) + da_o * p["lstm.peep_o"]
        da_i = dc * gate_g * gate_i * (1 - gate_i)
        da_f = dc * c_prev * gate_f * (1 - gate_f)
        da_g = dc * gate_i * (1 - gate_g ** 2)
        grads["lstm.peep_o"] += np.sum(da_o * c, axis=0)
        grads["lstm.peep_i"] += np.sum(da_i * c_prev, axis=0)
        grads["lstm.peep_f"] += np.sum(da_f * c_prev, axis=0)
        da = np.concatenate([da_i, da_f, da_g, da_o], axis=1)
        grads["lstm.W_x"] += x.T @ da
        grads["lstm.W_h"] += h_prev.T @ da
        grads["lstm.b"] += da.sum(axis=0)
        dh = da @ p["lstm.W_h"].T
        dc = dc * gate_f + da_i * p["lstm.peep_i"] + da_f * p["lstm.peep_f"]
    return result, grads


def _check_mode(params: NetworkParams, mode: Optional[LossMode]) -> LossMode:
    if mode is not None and mode != params.loss_mode:
        raise CompatibilityError(f"network was trained with loss mode '{params.loss_mode}', got '{mode}'")
    return params.loss_mode


def predict_batch(params: NetworkParams, boxes: np.ndarray, positions: np.ndarray, K: CameraIntrinsics,
                  zero_lateral: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Depth at the final observation for many examples; returns (depths, ok)"""
    if boxes.shape[1] != params.n:
        raise CompatibilityError(f"network expects n={params.n} observations, got {boxes.shape[1]}")
    batch = normalize_batch(boxes, positions, K, params.loss_mode, zero_lateral=zero_lateral, dtype=params.dtype)
    f_n = forward(params, batch.inputs, all_steps=False).astype(np.float64)
    depth = np.where(batch.valid, f_n * batch.scale, np.nan)
    return depth, batch.valid


def predict_depth(params: NetworkParams, obs: ObservationSet, K: CameraIntrinsics,
                  mode: Optional[LossMode] = None) -> float:
    mode = _check_mode(params, mode)
    if obs.n != params.n:
        raise CompatibilityError(f"network expects n={params.n} observations, got {obs.n}")
    normalized = normalize(obs, K, mode)
    f_n = forward(params, normalized.rows.astype(params.dtype)[None], all_steps=False)[0]
    return float(f_n) * normalized.scale
