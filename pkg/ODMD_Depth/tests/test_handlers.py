import io
import json

import numpy as np
import pytest
from rich.console import Console

from odmd_app.benchmark import BoxLSMethod, EnsembleMethod, NetworkMethod, evaluate
from odmd_app.checkpoint import save_checkpoint
from odmd_app.errors import CompatibilityError, ConfigError, InputError, ParseError
from odmd_app.handlers import ModelHandler, PresetHandler, UserInterface


@pytest.fixture
def presets():
    return PresetHandler(extra_path="")


@pytest.fixture
def checkpoint(tmp_path, tiny_params):
    path = tmp_path / "tiny.ckpt"
    save_checkpoint(str(path), tiny_params, {"preset": "tiny"})
    return str(path)


class TestPresetHandler:
    def test_builtin_names(self, presets):
        assert presets.generation_names() == sorted(["normal", "perturb-camera", "perturb-detect", "perturb-all",
                                                     "z-normal", "z-perturb"])
        assert {"dbox-p", "dbox-ns", "dbox-abs", "dbox-p-z", "dbox-ns-z", "dbox-abs-z"} <= set(
            presets.training_names())

    def test_every_preset_builds(self, presets):
        for name in presets.generation_names():
            assert presets.generation_config(name).name == name
        for name in presets.training_names():
            cfg = presets.training_config(name)
            assert cfg.name == name and cfg.validation_sets

    def test_generation_presets(self, presets):
        assert not presets.generation_config("normal").perturb.enabled
        detect = presets.generation_config("perturb-detect")
        assert (detect.perturb.sigma_box, detect.perturb.replace_prob) == (0.001, 0.1)
        z = presets.generation_config("z-perturb")
        assert z.dp_max == (0.0, 0.0, 0.4625) and z.intrinsics.fx == 240.5

    def test_training_presets(self, presets):
        cfg = presets.training_config("dbox-abs-z")
        assert cfg.loss_mode == "abs" and cfg.gen.name == "z-perturb"
        assert cfg.validation_sets == ["z-perturb"]
        assert presets.training_config("dbox-p").iterations == 10_000_000

    def test_split_seeds_differ(self, presets):
        seeds = [presets.split_seed(name, split) for name in presets.generation_names()
                 for split in ("validation", "test")]
        assert len(set(seeds)) == len(seeds)
        with pytest.raises(ConfigError):
            presets.split_seed("normal", "train")

    def test_benchmark_split_is_reproducible(self, presets):
        a = presets.benchmark_set("perturb-camera", "validation", size=30, threads=1)
        b = presets.benchmark_set("perturb-camera", "validation", size=30, threads=1)
        np.testing.assert_array_equal(a.examples.boxes, b.examples.boxes)
        assert a.provenance["seed"] == 1002
        assert len(presets.benchmark_set("normal", size=12, threads=1)) == 12

    def test_unknown_preset(self, presets):
        with pytest.raises(ConfigError, match="available"):
            presets.generation_config("perturb-everything")
        with pytest.raises(ConfigError):
            presets.training_config("dbox-huge")

    def test_extra_presets_are_merged(self, tmp_path):
        extra = tmp_path / "extra.json"
        extra.write_text(json.dumps({
            "generation": {"short": {"config": {"n": 5}, "validation_seed": 7}},
            "training": {"short-run": {"gen": "short", "iterations": 30, "validation_sets": ["short"]}},
        }))
        handler = PresetHandler(extra_path=str(extra))
        assert handler.generation_config("short").n == 5
        assert handler.split_seed("short", "test") == 2000
        cfg = handler.training_config("short-run")
        assert cfg.batch_size == 512 and cfg.gen.n == 5
        assert "normal" in handler.generation_names()

    def test_bad_extra_files(self, tmp_path):
        with pytest.raises(ConfigError):
            PresetHandler(extra_path=str(tmp_path / "missing.json"))
        broken = tmp_path / "broken.json"
        broken.write_text("{\n  \"generation\": [}")
        with pytest.raises(ParseError):
            PresetHandler(extra_path=str(broken))
        bad_mode = tmp_path / "mode.json"
        bad_mode.write_text(json.dumps({"training": {"x": {"loss_mode": "huber"}}}))
        with pytest.raises(ConfigError):
            PresetHandler(extra_path=str(bad_mode))

    def test_training_validation_sets_must_exist(self, tmp_path):
        extra = tmp_path / "extra.json"
        extra.write_text(json.dumps({"training": {"x": {"validation_sets": ["nowhere"]}}}))
        with pytest.raises(ConfigError):
            PresetHandler(extra_path=str(extra)).training_config("x")


class TestModelHandler:
    def test_loads_once_and_describes(self, checkpoint):
        handler = ModelHandler(checkpoint)
        assert handler.available
        assert handler.describe()["loaded"] is False
        params = handler.load()
        assert handler.load() is params
        info = handler.describe()
        assert info["n"] == 4 and info["loss_mode"] == "rel" and info["metadata"] == {"preset": "tiny"}

    def test_compatibility(self, checkpoint):
        handler = ModelHandler(checkpoint)
        assert handler.check_compatible(4, "rel").n == 4
        with pytest.raises(CompatibilityError):
            handler.check_compatible(10)
        with pytest.raises(CompatibilityError):
            handler.check_compatible(4, "abs")

    def test_methods(self, checkpoint):
        handler = ModelHandler(checkpoint)
        assert isinstance(handler.get_method(4), NetworkMethod)
        assert isinstance(handler.get_method(4, ensemble_trials=3), EnsembleMethod)
        assert handler.get_method(4, zero_lateral=True).zero_lateral

    def test_missing_checkpoint(self, tmp_path):
        unset = ModelHandler("")
        assert not unset.available
        with pytest.raises(InputError, match="MODEL_CHECKPOINT"):
            unset.load()
        with pytest.raises(InputError, match="not found"):
            ModelHandler(str(tmp_path / "nothing.ckpt")).load()

    def test_checkpoint_from_environment(self, checkpoint, monkeypatch):
        monkeypatch.setenv("MODEL_CHECKPOINT", checkpoint)
        assert ModelHandler().checkpoint_path == checkpoint


class TestUserInterface:
    @pytest.fixture
    def ui(self):
        return UserInterface(console=Console(file=io.StringIO(), width=200, color_system=None))

    def test_messages(self, ui, capsys):
        ui.show_message("Generated 10 examples")
        ui.show_error("dataset not found")
        ui.show_section("Evaluation")
        out = capsys.readouterr().out
        assert "Generated 10 examples" in out
        assert "dataset not found" in out
        assert "Evaluation" in out and "====" in out

    def test_report_tables(self, ui, small_set, capsys):
        report = evaluate(BoxLSMethod(), small_set, threads=1)
        ui.show_report(report)
        text = ui.console.file.getvalue()
        assert "box-ls: percent error" in text and "box-ls: absolute error" in text
        assert "small" in text and "Median" in text
        assert "All-Sets mean percent error" in capsys.readouterr().out

    def test_comparison_and_key_values(self, ui, small_set):
        reports = [evaluate(BoxLSMethod(), small_set, threads=1),
                   evaluate(EnsembleMethod(BoxLSMethod(), 3), small_set, threads=1)]
        ui.show_comparison(reports)
        ui.show_key_values("Checkpoint", {"n": 4, "best_val_error": 12.5})
        text = ui.console.file.getvalue()
        assert "box-ls+ensemble3" in text
        assert "12.5000" in text
