import os
import logging
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv

from odmd_app.benchmark import EnsembleMethod, build_method, evaluate, fill_missing_detections
from odmd_app.config import CameraIntrinsics
from odmd_app.errors import DegenerateGeometry, InputError
from odmd_app.geometry import BoundingBox, CameraPosition
from odmd_app.handlers import ModelHandler
from odmd_app.serialization import read_dataset, report_dict

# Load environment variables from .env file
load_dotenv()

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def setup_logging(service: str, log_dir: Optional[str] = None, level: Optional[str] = None) -> logging.Logger:
    """
    Configure root logging once per entry point

    Parameters:
    - service: prefix of the daily log file name
    - log_dir: directory for log files (LOG_DIR, default ./logs)
    - level: log level name (LOG_LEVEL, default INFO)

    Returns:
    - Logger for the calling service
    """
    log_dir = log_dir or os.path.join(BASE_DIR, os.getenv("LOG_DIR", "logs"))
    os.makedirs(log_dir, exist_ok=True)
    level_name = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(os.path.join(log_dir, f"{service}_{datetime.now().strftime('%Y%m%d')}.log")),
            logging.StreamHandler()
        ]
    )
    return logging.getLogger(service)


def _method_for(name: str, n: int, ensemble_trials: int, model_handler: Optional[ModelHandler],
                zero_lateral: bool = False):
    if name == "dbox":
        if model_handler is None:
            raise InputError("method 'dbox' needs a checkpoint")
        return model_handler.get_method(n, zero_lateral=zero_lateral, ensemble_trials=ensemble_trials)
    return build_method(name, ensemble_trials=ensemble_trials)


def process_estimate_request(intrinsics: Dict[str, Any], observations: Sequence[Dict[str, Any]],
                             method: str = "box-ls", ensemble_trials: int = 1,
                             model_handler: Optional[ModelHandler] = None) -> Dict[str, Any]:
    """
    Estimate the depth of the final observation

    Parameters:
    - intrinsics: camera intrinsics fields
    - observations: dicts with camera position CX, CY, CZ and box x, y, w, h
      (all four box fields null for a missed detection)
    - method: box-ls, expansion-2obs, parallax-2obs or dbox
    - ensemble_trials: number of random subsets to take the median over
    - model_handler: checkpoint source for dbox

    Returns:
    - Dict with depth, method and the indices of filled detections
    """
    K = CameraIntrinsics.from_dict(intrinsics)
    boxes: List[Optional[BoundingBox]] = []
    positions: List[CameraPosition] = []
    for obs in observations:
        box = [obs.get(k) for k in ("x", "y", "w", "h")]
        if any(v is None for v in box) and not all(v is None for v in box):
            raise InputError(f"observation {len(boxes)} has a partial bounding box")
        boxes.append(None if box[0] is None else BoundingBox(*box))
        positions.append(CameraPosition(obs["CX"], obs["CY"], obs["CZ"]))
    filled = [i for i, box in enumerate(boxes) if box is None]
    obs_set = fill_missing_detections(boxes, positions)

    depth_method = _method_for(method, obs_set.n, ensemble_trials, model_handler)
    z, ok = depth_method.predict(obs_set.boxes()[None], obs_set.positions()[None], K)
    if not ok[0]:
        raise DegenerateGeometry(f"{depth_method.name} found no usable depth cue in the observations")
    return {"depth": float(z[0]), "method": depth_method.name, "filled_indices": filled}


def process_evaluate_request(dataset_path: str, method: str = "box-ls", ensemble_trials: int = 1,
                             model_handler: Optional[ModelHandler] = None,
                             include_records: bool = False) -> Dict[str, Any]:
    """
    Evaluate a depth method on an uploaded dataset file

    Parameters:
    - dataset_path: path to a .odmd.jsonl or .odmd.bin file
    - method: method name as for process_estimate_request
    - ensemble_trials: ensemble size, 1 for a single prediction
    - model_handler: checkpoint source for dbox
    - include_records: also return the per-example records

    Returns:
    - Report dict with per-set statistics and the all-sets aggregate
    """
    bset = read_dataset(dataset_path)
    depth_method = _method_for(method, bset.examples.n, ensemble_trials, model_handler)
    if isinstance(depth_method, EnsembleMethod):
        logger.info(f"Evaluating {depth_method.name} with {ensemble_trials} trials per example")
    report = evaluate(depth_method, bset)
    result = report_dict(report)
    if not include_records:
        result.pop("records")
    return result
