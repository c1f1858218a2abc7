"""Training loop for DBox on continuously generated data.

Every iteration draws a fresh batch from stream family ``cfg.seed`` (the
batch for iteration k holds streams k*batch_size ... (k+1)*batch_size-1),
so a run is fully determined by its config. The next batch is produced by a
background worker while the current one trains.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .benchmark import BenchmarkSet, NetworkMethod, evaluate
from .config import TrainConfig
from .errors import ContractError, NumericAbort
from .generator import generate_batch
from .network import NetworkParams, NormalizedBatch, backward, init_params, normalize_batch

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    step: int
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: "Tensors") -> "AdamState":
        tensors = params.tensors if isinstance(params, NetworkParams) else params
        return cls(0, {k: np.zeros_like(v) for k, v in tensors.items()},
                   {k: np.zeros_like(v) for k, v in tensors.items()})


Tensors = Union[NetworkParams, Dict[str, np.ndarray]]


def adam_step(params: Tensors, grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> Tuple[Tensors, AdamState]:
    """One bias-corrected Adam update; returns new params (same kind as given) and state"""
    tensors = params.tensors if isinstance(params, NetworkParams) else params
    beta1, beta2 = betas
    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    new_tensors, new_m, new_v = {}, {}, {}
    for name, value in tensors.items():
        if name not in grads:
            raise ContractError(f"gradient missing for tensor {name}")
        grad = grads[name]
        if grad.shape != value.shape or state.m[name].shape != value.shape:
            raise ContractError(f"gradient for {name} has shape {grad.shape}, expected {value.shape}")
        m = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        new_tensors[name] = (value - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(value.dtype)
        new_m[name] = m.astype(value.dtype)
        new_v[name] = v.astype(value.dtype)
    new_params = params.like(new_tensors) if isinstance(params, NetworkParams) else new_tensors
    return new_params, AdamState(step, new_m, new_v)


@dataclass
class TrainResult:
    params: NetworkParams
    log: pd.DataFrame
    losses: np.ndarray
    best_iteration: int
    best_val_error: float
    metadata: Dict[str, object] = field(default_factory=dict)


def make_training_batch(cfg: TrainConfig, iteration: int, threads: Optional[int] = None) -> NormalizedBatch:
    examples = generate_batch(cfg.gen, cfg.batch_size, cfg.seed, start=iteration * cfg.batch_size,
                              threads=threads)
    return normalize_batch(examples.boxes, examples.positions, examples.intrinsics, cfg.loss_mode,
                           labels=examples.labels)


def validation_error(params: NetworkParams, sets: List[BenchmarkSet], threads: Optional[int] = None) -> float:
    """Mean over sets of the per-set mean percent error"""
    return evaluate(NetworkMethod(params), sets, threads).all_sets_aggregate


def train(cfg: TrainConfig, validation_sets: List[BenchmarkSet], threads: Optional[int] = None,
          on_check: Optional[Callable[[Dict[str, float]], None]] = None) -> TrainResult:
    """Train from scratch and keep the parameters with the best validation error.

    Args:
        cfg: training configuration
        validation_sets: fixed sets scored at every check
        threads: worker threads for generation and evaluation
        on_check: called with each log row as it is produced

    Returns:
        TrainResult with the best parameters and a log row per validation check
    """
    if not validation_sets:
        raise ContractError("training needs at least one validation set")
    params = init_params(cfg.gen.n, cfg.loss_mode, cfg.seed, cfg.hidden_size, cfg.fc_width, cfg.fc_layers)
    state = AdamState.zeros(params)
    checks = set(cfg.validation_iterations)
    logger.info(f"Training {cfg.name}: {cfg.iterations} iterations, batch {cfg.batch_size}, "
                f"loss {cfg.loss_mode}, {params.count()} parameters, {len(checks)} validation checks")

    losses = np.empty(cfg.iterations, dtype=np.float64)
    rows: List[Dict[str, float]] = []
    best_params, best_error, best_iteration = params, math.inf, 0
    begin = time.perf_counter()

    with ThreadPoolExecutor(max_workers=1) as prefetch:
        pending = prefetch.submit(make_training_batch, cfg, 0, threads)
        for iteration in range(1, cfg.iterations + 1):
            batch = pending.result()
            if iteration < cfg.iterations:
                pending = prefetch.submit(make_training_batch, cfg, iteration, threads)
            result, grads = backward(params, batch)
            if not math.isfinite(result.loss):
                logger.error(f"{cfg.name}: non-finite loss {result.loss} at iteration {iteration}")
                raise NumericAbort(f"non-finite training loss {result.loss} at iteration {iteration}")
            losses[iteration - 1] = result.loss
            params, state = adam_step(params, grads, state, cfg.lr, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)

            if iteration in checks:
                val_error = validation_error(params, validation_sets, threads)
                if not math.isfinite(val_error):
                    raise NumericAbort(f"non-finite validation error at iteration {iteration}")
                row = {"iteration": iteration, "loss": result.loss, "val_error": val_error}
                rows.append(row)
                if val_error < best_error:
                    best_params, best_error, best_iteration = params, val_error, iteration
                rate = iteration / (time.perf_counter() - begin)
                logger.info(f"[{cfg.name}] {iteration}/{cfg.iterations} loss={result.loss:.6f} "
                            f"val={val_error:.4f}% best={best_error:.4f}% ({rate:.1f} it/s)")
                if on_check:
                    on_check(row)

    if not rows:
        # checkpoint_every beyond the run length still reports a validation score
        best_error = validation_error(params, validation_sets, threads)
        best_params, best_iteration = params, cfg.iterations
        rows.append({"iteration": cfg.iterations, "loss": float(losses[-1]), "val_error": best_error})

    elapsed = time.perf_counter() - begin
    logger.info(f"Finished {cfg.name} in {elapsed:.1f}s; best validation error {best_error:.4f}% "
                f"at iteration {best_iteration}")
    metadata = {"preset": cfg.name, "loss_mode": cfg.loss_mode, "best_iteration": best_iteration,
                "best_val_error": best_error, "iterations": cfg.iterations, "seed": cfg.seed,
                "validation_sets": list(cfg.validation_sets)}
    return TrainResult(best_params, pd.DataFrame(rows), losses, best_iteration, best_error, metadata)
