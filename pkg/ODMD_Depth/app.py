from fastapi import FastAPI, UploadFile, File, Form, HTTPException, Depends
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field
import os
import tempfile
import shutil
from typing import Dict, List, Optional
import uvicorn
from datetime import datetime
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from utils import setup_logging, process_estimate_request, process_evaluate_request
from odmd_app import __version__
from odmd_app.errors import CompatibilityError, DegenerateGeometry, OdmdError, VersionError
from odmd_app.handlers import ModelHandler

logger = setup_logging("odmd_depth")

# API Configuration
HOST = os.getenv("HOST", "0.0.0.0")
PORT = int(os.getenv("PORT", "8010"))
RELOAD = os.getenv("RELOAD", "false").lower() == "true"

# Directory Configuration
BASE_DIR = os.path.dirname(os.path.abspath(__file__))
UPLOADS_DIR = os.path.join(BASE_DIR, os.getenv("UPLOADS_DIR", "uploads"))

# CORS Configuration
ALLOW_ORIGINS = os.getenv("ALLOW_ORIGINS", "*")

DATASET_SUFFIXES = (".odmd.jsonl", ".odmd.bin")

app = FastAPI(
    title="ODMD Depth API",
    description="Object depth from camera motion and bounding boxes",
    version=__version__
)

# Log application startup
logger.info("=== ODMD Depth API Starting ===")
logger.info(f"Host: {HOST}, Port: {PORT}, Reload: {RELOAD}")
logger.info(f"Uploads Directory: {UPLOADS_DIR}")

app.add_middleware(
    CORSMiddleware,
    allow_origins=[ALLOW_ORIGINS],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

os.makedirs(UPLOADS_DIR, exist_ok=True)

model_handler = ModelHandler()


def get_model_handler() -> ModelHandler:
    return model_handler


class ObservationIn(BaseModel):
    x: Optional[float] = None
    y: Optional[float] = None
    w: Optional[float] = None
    h: Optional[float] = None
    CX: float
    CY: float
    CZ: float


class EstimateRequest(BaseModel):
    intrinsics: Dict[str, float]
    observations: List[ObservationIn]
    method: str = "box-ls"
    ensemble_trials: int = Field(1, ge=1)


def _http_error(request_id: str, e: Exception) -> HTTPException:
    if isinstance(e, DegenerateGeometry):
        logger.warning(f"[{request_id}] Degenerate input: {str(e)}")
        return HTTPException(status_code=422, detail=f"Degenerate geometry: {str(e)}")
    if isinstance(e, (CompatibilityError, VersionError)):
        logger.error(f"[{request_id}] Checkpoint problem: {str(e)}")
        return HTTPException(status_code=409, detail=f"Checkpoint incompatible: {str(e)}")
    if isinstance(e, OdmdError):
        logger.error(f"[{request_id}] Invalid request: {str(e)}")
        return HTTPException(status_code=400, detail=str(e))
    logger.error(f"[{request_id}] Request failed with error: {str(e)}")
    return HTTPException(status_code=500, detail=f"Error processing request: {str(e)}")


def _require_model(request_id: str, method: str, handler: ModelHandler):
    if method == "dbox" and not handler.available:
        logger.error(f"[{request_id}] dbox requested but no checkpoint is available ({handler.checkpoint_path})")
        raise HTTPException(status_code=503, detail="No DBox checkpoint configured (set MODEL_CHECKPOINT)")


@app.get("/")
async def root():
    logger.info("Root endpoint accessed")
    return {"message": "ODMD Depth API is running", "docs": "/docs"}


@app.get("/api/status")
async def status(handler: ModelHandler = Depends(get_model_handler)):
    """API status endpoint to check if the API is running"""
    logger.info("API status check requested")
    return {"message": "ODMD Depth API is running", "version": __version__,
            "dbox_available": handler.available}


@app.get("/health")
async def health():
    return {"status": "healthy", "timestamp": datetime.now().isoformat()}


@app.post("/estimate")
def estimate(request: EstimateRequest, handler: ModelHandler = Depends(get_model_handler)):
    """
    Estimate the depth of the object at the final observation

    Parameters:
    - intrinsics: fx, fy, cx, cy and optionally image_width, image_height
    - observations: camera positions with boxes, box fields null for a missed detection
    - method: box-ls, expansion-2obs, parallax-2obs or dbox
    - ensemble_trials: median over this many random observation subsets

    Returns:
    - JSON response with depth, method and filled_indices
    """
    request_id = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    logger.info(f"[{request_id}] Estimate request received: method={request.method}, "
                f"n={len(request.observations)}, ensemble_trials={request.ensemble_trials}")
    _require_model(request_id, request.method, handler)
    try:
        result = process_estimate_request(
            request.intrinsics,
            [obs.model_dump() for obs in request.observations],
            method=request.method,
            ensemble_trials=request.ensemble_trials,
            model_handler=handler,
        )
    except Exception as e:
        raise _http_error(request_id, e)
    logger.info(f"[{request_id}] Estimated depth {result['depth']:.6f} with {result['method']}")
    return JSONResponse(content=result)


@app.post("/evaluate")
def evaluate_dataset(
    file: UploadFile = File(...),
    method: str = Form("box-ls"),
    ensemble_trials: int = Form(1),
    include_records: bool = Form(False),
    handler: ModelHandler = Depends(get_model_handler),
):
    """
    Evaluate a depth method on an uploaded benchmark dataset

    Parameters:
    - file: .odmd.jsonl or .odmd.bin dataset
    - method: depth method name
    - ensemble_trials: ensemble size
    - include_records: also return per-example records

    Returns:
    - JSON report with per-set statistics and the all-sets aggregate
    """
    request_id = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    logger.info(f"[{request_id}] Evaluate request received: file={file.filename}, method={method}")

    suffix = next((s for s in DATASET_SUFFIXES if (file.filename or "").endswith(s)), None)
    if suffix is None:
        logger.error(f"[{request_id}] Request rejected: unsupported file name {file.filename}")
        raise HTTPException(status_code=400, detail=f"Dataset must end in one of {DATASET_SUFFIXES}")
    if ensemble_trials < 1:
        raise HTTPException(status_code=400, detail="ensemble_trials must be >= 1")
    _require_model(request_id, method, handler)

    uploaded_file_path = None
    try:
        with tempfile.NamedTemporaryFile(delete=False, dir=UPLOADS_DIR, suffix=suffix) as temp_file:
            uploaded_file_path = temp_file.name
            shutil.copyfileobj(file.file, temp_file)
        logger.info(f"[{request_id}] Upload stored at {uploaded_file_path}")
    except Exception as e:
        logger.error(f"[{request_id}] File upload failed: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Error processing file upload: {str(e)}")
    finally:
        file.file.close()

    try:
        start_time = datetime.now()
        result = process_evaluate_request(uploaded_file_path, method, ensemble_trials, handler, include_records)
        processing_time = (datetime.now() - start_time).total_seconds()
        logger.info(f"[{request_id}] Evaluation finished in {processing_time:.2f} seconds, "
                    f"aggregate {result['all_sets_aggregate']}")
        return JSONResponse(content=result)
    except Exception as e:
        raise _http_error(request_id, e)
    finally:
        # Clean up the temporary file
        if uploaded_file_path and os.path.exists(uploaded_file_path):
            logger.info(f"[{request_id}] Cleaning up temporary file: {uploaded_file_path}")
            os.unlink(uploaded_file_path)


if __name__ == "__main__":
    logger.info("=== Starting ODMD Depth API Server ===")
    logger.info(f"Server will start on {HOST}:{PORT} with reload={RELOAD}")
    uvicorn.run("app:app", host=HOST, port=PORT, reload=RELOAD)
