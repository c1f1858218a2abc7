import logging
import os
import threading
from typing import Any, Dict, Optional

from ..benchmark import DepthMethod, build_method
from ..checkpoint import load_checkpoint
from ..config import LossMode
from ..errors import CompatibilityError, InputError
from ..network import NetworkParams

logger = logging.getLogger(__name__)


class ModelHandler:
    """Loads a DBox checkpoint once and hands out methods built on it"""

    def __init__(self, checkpoint_path: Optional[str] = None):
        self.checkpoint_path = checkpoint_path if checkpoint_path is not None else os.getenv("MODEL_CHECKPOINT")
        self.params: Optional[NetworkParams] = None
        self.metadata: Dict[str, Any] = {}
        self._lock = threading.Lock()

    @property
    def available(self) -> bool:
        return bool(self.checkpoint_path) and os.path.isfile(self.checkpoint_path)

    def load(self) -> NetworkParams:
        with self._lock:
            if self.params is None:
                if not self.checkpoint_path:
                    raise InputError("no checkpoint configured (set MODEL_CHECKPOINT)")
                if not os.path.isfile(self.checkpoint_path):
                    raise InputError(f"checkpoint not found: {self.checkpoint_path}")
                self.params, self.metadata = load_checkpoint(self.checkpoint_path)
        return self.params

    def check_compatible(self, n: int, mode: Optional[LossMode] = None) -> NetworkParams:
        params = self.load()
        if params.n != n:
            raise CompatibilityError(f"checkpoint expects n={params.n} observations, data has n={n}")
        if mode is not None and params.loss_mode != mode:
            raise CompatibilityError(f"checkpoint was trained with loss mode {params.loss_mode}, requested {mode}")
        return params

    def get_method(self, n: int, zero_lateral: bool = False, ensemble_trials: int = 1,
                   seed: int = 0) -> DepthMethod:
        params = self.check_compatible(n)
        return build_method("dbox", params, zero_lateral=zero_lateral, ensemble_trials=ensemble_trials, seed=seed)

    def describe(self) -> Dict[str, Any]:
        if self.params is None:
            return {"checkpoint": self.checkpoint_path, "loaded": False}
        return {
            "checkpoint": self.checkpoint_path,
            "loaded": True,
            "n": self.params.n,
            "loss_mode": self.params.loss_mode,
            "hidden_size": self.params.hidden_size,
            "parameters": self.params.count(),
            "metadata": self.metadata,
        }
