import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..benchmark import BenchmarkSet, build_benchmark_set
from ..config import GenerationConfig, TrainConfig
from ..errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

BUILTIN_PRESETS = Path(__file__).resolve().parent / "data" / "presets.json"

# Defaults merged into every benchmark preset entry
BENCHMARK_SCHEMA = {
    "config": {
        "value": {},
        "type": dict,
        "prompt": "GenerationConfig fields overriding the Normal defaults",
    },
    "validation_seed": {
        "value": 1000,
        "type": int,
        "prompt": "Seed of the validation split",
    },
    "test_seed": {
        "value": 2000,
        "type": int,
        "prompt": "Seed of the test split",
    },
    "validation_size": {
        "value": 2400,
        "type": int,
        "prompt": "Examples in the validation split",
    },
    "test_size": {
        "value": 3000,
        "type": int,
        "prompt": "Examples in the test split",
    },
}

# Defaults merged into every training preset entry
TRAINING_SCHEMA = {
    "gen": {
        "value": "normal",
        "type": str,
        "prompt": "Benchmark preset the training data is drawn from",
    },
    "loss_mode": {
        "value": "rel",
        "options": ["rel", "abs"],
        "type": str,
        "prompt": "Loss formulation",
    },
    "iterations": {
        "value": 10_000,
        "type": int,
        "prompt": "Training iterations",
    },
    "batch_size": {
        "value": 512,
        "type": int,
        "prompt": "Examples per iteration",
    },
    "validation_sets": {
        "value": ["normal"],
        "type": list,
        "prompt": "Benchmark presets scored during training",
    },
}

SPLITS = ("validation", "test")


class PresetHandler:
    """Named generation and training configurations.

    Built-in presets come from ``handlers/data/presets.json``. A JSON file named
    by ``ODMD_PRESETS`` (same layout) is merged over them.
    """

    def __init__(self, path: Optional[str] = None, extra_path: Optional[str] = None):
        self.path = Path(path) if path else BUILTIN_PRESETS
        self.extra_path = extra_path if extra_path is not None else os.getenv("ODMD_PRESETS")
        self.presets = self.load_presets()

    def load_presets(self) -> Dict[str, Dict[str, Dict[str, Any]]]:
        presets = self._read(self.path)
        if self.extra_path:
            extra = self._read(Path(self.extra_path))
            for kind in ("generation", "training"):
                presets.setdefault(kind, {}).update(extra.get(kind, {}))
            logger.info(f"Merged presets from {self.extra_path}")

        # Merge with defaults to ensure all keys are present
        for kind, schema in (("generation", BENCHMARK_SCHEMA), ("training", TRAINING_SCHEMA)):
            defaults = self.default_entry(schema)
            for name, entry in presets.get(kind, {}).items():
                for key, value in defaults.items():
                    entry.setdefault(key, copy.deepcopy(value))
                for key in schema:
                    if "options" in schema[key] and entry[key] not in schema[key]["options"]:
                        raise ConfigError(f"preset {name}: {key} must be one of {schema[key]['options']}")
        return presets

    @staticmethod
    def _read(path: Path) -> Dict[str, Any]:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"preset file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid preset file {path}: {e.msg}", line=e.lineno, offset=e.colno) from None
        if not isinstance(data, dict):
            raise ParseError(f"preset file {path} must hold a JSON object")
        return data

    @staticmethod
    def default_entry(schema: Dict[str, Dict[str, Any]]) -> Dict[str, Any]:
        return {k: v["value"] for k, v in schema.items()}

    def generation_names(self) -> List[str]:
        return sorted(self.presets.get("generation", {}))

    def training_names(self) -> List[str]:
        return sorted(self.presets.get("training", {}))

    def _entry(self, kind: str, name: str) -> Dict[str, Any]:
        entries = self.presets.get(kind, {})
        if name not in entries:
            raise ConfigError(f"unknown {kind} preset {name!r}; available: {', '.join(sorted(entries))}")
        return entries[name]

    def generation_config(self, name: str) -> GenerationConfig:
        entry = self._entry("generation", name)
        return GenerationConfig.from_dict({**entry["config"], "name": name})

    def training_config(self, name: str) -> TrainConfig:
        entry = dict(self._entry("training", name))
        gen = self.generation_config(entry.pop("gen"))
        for set_name in entry["validation_sets"]:
            self._entry("generation", set_name)
        return TrainConfig.from_dict({**entry, "name": name, "gen": gen.model_dump()})

    def split_seed(self, name: str, split: str) -> int:
        if split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
        return int(self._entry("generation", name)[f"{split}_seed"])

    def split_size(self, name: str, split: str) -> int:
        if split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
        return int(self._entry("generation", name)[f"{split}_size"])

    def benchmark_set(self, name: str, split: str = "test", size: Optional[int] = None,
                      threads: Optional[int] = None) -> BenchmarkSet:
        """Regenerate the fixed validation or test split of a benchmark preset"""
        cfg = self.generation_config(name)
        return build_benchmark_set(cfg, name, split, self.split_seed(name, split),
                                   size or self.split_size(name, split), threads)

    def validation_sets(self, cfg: TrainConfig, threads: Optional[int] = None) -> List[BenchmarkSet]:
        return [self.benchmark_set(name, "validation", cfg.validation_size, threads)
                for name in cfg.validation_sets]
