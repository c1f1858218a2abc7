"""Typed configuration for data generation and training.

Models are frozen pydantic models that reject unknown fields. Validation
failures are translated into the package's own errors: unknown or mistyped
fields become ``ParseError`` (naming the field), violated bounds become
``ConfigError``.
"""

import logging
import os
from typing import Any, Dict, List, Literal, Optional, Tuple, Type, TypeVar, get_args, get_origin

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, ParseError

load_dotenv()

logger = logging.getLogger(__name__)

# Runtime settings
ODMD_THREADS = os.getenv("ODMD_THREADS")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

Vec3 = Tuple[float, float, float]
LossMode = Literal["rel", "abs"]

M = TypeVar("M", bound="OdmdModel")

_PARSE_ERROR_TYPES = ("extra_forbidden", "missing", "literal_error")


def default_threads() -> int:
    """Worker count from ODMD_THREADS, falling back to the CPU count"""
    if ODMD_THREADS:
        try:
            return max(1, int(ODMD_THREADS))
        except ValueError:
            logger.warning(f"Ignoring non-integer ODMD_THREADS={ODMD_THREADS!r}")
    return os.cpu_count() or 1


def _translate(error: ValidationError, model_name: str) -> Exception:
    first = error.errors()[0]
    field = ".".join(str(part) for part in first["loc"]) or None
    kind = first["type"]
    if kind == "extra_forbidden":
        return ParseError(f"Unknown field '{field}' in {model_name}", field=field)
    if kind in _PARSE_ERROR_TYPES or kind.endswith("_type") or kind.endswith("_parsing"):
        return ParseError(f"Invalid field '{field}' in {model_name}: {first['msg']}", field=field)
    message = first["msg"].removeprefix("Value error, ")
    return ConfigError(f"{model_name}: {message}" if not field else f"{model_name}.{field}: {message}")


def _with_path(error: ParseError, path: str) -> ParseError:
    field = f"{path}.{error.field}" if error.field else path
    return ParseError(f"{path}: {error}", field=field)


def _nested_model(annotation: Any) -> Tuple[Optional[Type["OdmdModel"]], bool]:
    """The OdmdModel class an annotation holds, and whether it is a list of them"""
    if isinstance(annotation, type) and issubclass(annotation, OdmdModel):
        return annotation, False
    if get_origin(annotation) is list and get_args(annotation):
        inner, _ = _nested_model(get_args(annotation)[0])
        return inner, inner is not None
    return None, False


def _build_nested(cls: Type["OdmdModel"], name: str, value: Any) -> Any:
    # Nested models are built here so their errors keep the full field path
    info = cls.model_fields.get(name)
    model, is_list = _nested_model(info.annotation) if info is not None else (None, False)
    if model is None:
        return value
    if is_list and isinstance(value, list):
        built = []
        for i, item in enumerate(value):
            try:
                built.append(item if isinstance(item, model) else model.from_dict(item))
            except ParseError as e:
                raise _with_path(e, f"{name}.{i}") from None
        return built
    if not is_list and isinstance(value, dict):
        try:
            return model.from_dict(value)
        except ParseError as e:
            raise _with_path(e, name) from None
    return value


class OdmdModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    def __init__(self, **data: Any):
        for name, value in data.items():
            data[name] = _build_nested(type(self), name, value)
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise _translate(e, type(self).__name__) from None

    @classmethod
    def from_dict(cls: Type[M], data: Dict[str, Any]) -> M:
        if not isinstance(data, dict):
            raise ParseError(f"{cls.__name__} must be a JSON object, got {type(data).__name__}")
        return cls(**data)


class CameraIntrinsics(OdmdModel):
    """Pinhole intrinsics in pixels plus the image size"""
    fx: float
    fy: float
    cx: float
    cy: float
    image_width: float = 640.0
    image_height: float = 480.0

    @model_validator(mode="after")
    def _check_positive(self):
        for name in ("fx", "fy", "image_width", "image_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        return self


class PerturbConfig(OdmdModel):
    """Perturbation magnitudes; all zero means clean data"""
    sigma_cam: float = 0.0
    sigma_box: float = 0.0
    replace_prob: float = 0.0
    replace_center_range: Tuple[float, float] = (0.1, 0.9)
    replace_size_range: Tuple[float, float] = (0.02, 0.5)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.sigma_cam < 0 or self.sigma_box < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if not 0.0 <= self.replace_prob <= 1.0:
            raise ValueError(f"replace_prob must lie in [0, 1], got {self.replace_prob}")
        for name in ("replace_center_range", "replace_size_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} lower bound {lo} exceeds upper bound {hi}")
        if self.replace_size_range[0] <= 0:
            raise ValueError("replace_size_range must be positive")
        return self

    @property
    def enabled(self) -> bool:
        return self.sigma_cam > 0 or self.sigma_box > 0 or self.replace_prob > 0


class GenerationConfig(OdmdModel):
    """Distribution of generated examples.

    Bounds follow the view constraints: the initial object center is drawn
    inside a range that keeps the whole box in frame at every camera
    position. Construction fails if that range is empty at ``z1_min``.
    """
    name: str = "custom"
    n: int = 10
    s_min: float = 0.01
    s_max: float = 0.175
    dp_min: Vec3 = (0.0, 0.0, 0.05)
    dp_max: Vec3 = (0.25, 0.175, 0.325)
    z1_min: float = 0.55
    z1_max: float = 1.0
    intrinsics: CameraIntrinsics = Field(
        default_factory=lambda: CameraIntrinsics(fx=205.5, fy=205.5, cx=320.5, cy=240.5))
    reverse_prob: float = 0.5
    perturb: PerturbConfig = Field(default_factory=PerturbConfig)
    direction_mode: Literal["rademacher", "positive"] = "rademacher"
    seed: int = 0

    @field_validator("seed")
    @classmethod
    def _check_seed(cls, value: int) -> int:
        if not 0 <= value < 2 ** 64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {value}")
        return value

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not 0 < self.s_min <= self.s_max:
            raise ValueError(f"need 0 < s_min <= s_max, got {self.s_min}, {self.s_max}")
        for axis in range(3):
            if not 0 <= self.dp_min[axis] <= self.dp_max[axis]:
                raise ValueError(f"need 0 <= dp_min <= dp_max on axis {axis}")
        if not 0 < self.z1_min <= self.z1_max:
            raise ValueError(f"need 0 < z1_min <= z1_max, got {self.z1_min}, {self.z1_max}")
        if not 0.0 <= self.reverse_prob <= 1.0:
            raise ValueError(f"reverse_prob must lie in [0, 1], got {self.reverse_prob}")

        (x_lo, x_hi), (y_lo, y_hi) = initial_center_bounds(self, self.z1_min)
        if x_lo > x_hi or y_lo > y_hi:
            raise ValueError(
                f"view constraints infeasible at z1_min={self.z1_min}: "
                f"X1 in [{x_lo:.6g}, {x_hi:.6g}], Y1 in [{y_lo:.6g}, {y_hi:.6g}]")
        centered = centered_depth_bound(self)
        if self.z1_min < centered:
            logger.warning(
                f"{self.name}: z1_min={self.z1_min} is below the centered-object bound {centered:.6g}; "
                f"initial center ranges remain non-empty")
        return self


def initial_center_bounds(cfg: GenerationConfig, z1):
    """Bounds on the initial object center (X1, Y1) given initial depth ``z1``.

    Accepts scalars or numpy arrays for ``z1``.
    """
    k = cfg.intrinsics
    dcx, dcy, dcz = cfg.dp_max
    half = cfg.s_max / 2.0
    x_lo = (k.cx / k.fx) * (dcz - z1) + dcx + half
    x_hi = ((k.image_width - k.cx) / k.fx) * (z1 - dcz) - dcx - half
    y_lo = (k.cy / k.fy) * (dcz - z1) + dcy + half
    y_hi = ((k.image_height - k.cy) / k.fy) * (z1 - dcz) - dcy - half
    return (x_lo, x_hi), (y_lo, y_hi)


def centered_depth_bound(cfg: GenerationConfig) -> float:
    """Smallest initial depth keeping an object centered at X1 = Y1 = 0 in view"""
    k = cfg.intrinsics
    dcx, dcy, dcz = cfg.dp_max
    half = cfg.s_max / 2.0
    return dcz + max(
        (k.fx / k.cx) * (half + dcx),
        (k.fy / k.cy) * (half + dcy),
        (k.fx / (k.image_width - k.cx)) * (half + dcx),
        (k.fy / (k.image_height - k.cy)) * (half + dcy),
    )


class TrainConfig(OdmdModel):
    name: str
    gen: GenerationConfig
    loss_mode: LossMode = "rel"
    iterations: int = 10_000
    batch_size: int = 512
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: Optional[int] = None
    validation_sets: List[str] = Field(default_factory=lambda: ["normal"])
    validation_size: int = 2400
    hidden_size: int = 128
    fc_width: int = 256
    fc_layers: int = 6
    seed: int = 0

    @model_validator(mode="after")
    def _check_training(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.validation_size < 1:
            raise ValueError("validation_size must be >= 1")
        if min(self.hidden_size, self.fc_width, self.fc_layers) < 1:
            raise ValueError("network sizes must be >= 1")
        return self

    @property
    def validation_iterations(self) -> Tuple[int, ...]:
        """Iterations after which the validation sets are scored.

        With ``checkpoint_every`` unset these are the hundred points j/100 of the
        run (rounded up), so every run of at least 100 iterations logs exactly
        100 rows and the last one falls on the final iteration.
        """
        if self.checkpoint_every is not None:
            return tuple(range(self.checkpoint_every, self.iterations + 1, self.checkpoint_every))
        return tuple(sorted({-(-j * self.iterations // 100) for j in range(1, 101)}))
