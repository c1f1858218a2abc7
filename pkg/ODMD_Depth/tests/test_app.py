import io

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app import app, get_model_handler
from conftest import synthetic_observations
from odmd_app.checkpoint import save_checkpoint
from odmd_app.geometry import Object3D
from odmd_app.handlers import ModelHandler
from odmd_app.serialization import write_dataset

OBJECT = Object3D(0.05, -0.03, 0.9, 0.12, 0.08)


@pytest.fixture
def client():
    app.dependency_overrides[get_model_handler] = lambda: ModelHandler("")
    yield TestClient(app)
    app.dependency_overrides.clear()


def _payload(K, n=4, method="box-ls"):
    t = np.linspace(0.0, 1.0, n)[:, None]
    positions = t * np.array([0.1, -0.05, 0.3])
    obs = synthetic_observations(K, OBJECT, positions - positions[-1])
    observations = [dict(zip(("x", "y", "w", "h", "CX", "CY", "CZ"), map(float, row)))
                    for row in np.concatenate([obs.boxes(), obs.positions()], axis=1)]
    return {"intrinsics": K.model_dump(), "observations": observations, "method": method}


def _dataset_bytes(tmp_path, bset, suffix=".odmd.jsonl"):
    path = tmp_path / f"set{suffix}"
    write_dataset(str(path), bset)
    return path.read_bytes()


class TestStatus:
    def test_root_and_status(self, client):
        assert client.get("/").json()["message"] == "ODMD Depth API is running"
        body = client.get("/api/status").json()
        assert body["dbox_available"] is False and "version" in body

    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "healthy" and body["timestamp"]


class TestEstimate:
    def test_box_ls_depth(self, client, K):
        response = client.post("/estimate", json=_payload(K))
        assert response.status_code == 200
        body = response.json()
        assert body["depth"] == pytest.approx(0.6, rel=1e-10)
        assert body["method"] == "box-ls" and body["filled_indices"] == []

    def test_missed_detection_is_filled(self, client, K):
        payload = _payload(K, n=5)
        for key in ("x", "y", "w", "h"):
            payload["observations"][1][key] = None
        body = client.post("/estimate", json=payload).json()
        assert body["filled_indices"] == [1]
        assert body["depth"] > 0

    def test_partial_box_is_bad_request(self, client, K):
        payload = _payload(K)
        payload["observations"][0]["w"] = None
        assert client.post("/estimate", json=payload).status_code == 400

    def test_degenerate_motion(self, client, K):
        payload = _payload(K)
        for obs in payload["observations"]:
            obs.update({"CX": 0.0, "CY": 0.0, "CZ": 0.0})
        payload["observations"] = [payload["observations"][-1]] * 3
        response = client.post("/estimate", json=payload)
        assert response.status_code == 422
        assert "Degenerate" in response.json()["detail"]

    def test_unknown_method(self, client, K):
        assert client.post("/estimate", json=_payload(K, method="sfm")).status_code == 400

    def test_ensemble_trials_validated(self, client, K):
        payload = _payload(K)
        payload["ensemble_trials"] = 0
        assert client.post("/estimate", json=payload).status_code == 422

    def test_dbox_without_checkpoint(self, client, K):
        assert client.post("/estimate", json=_payload(K, method="dbox")).status_code == 503

    def test_dbox_with_checkpoint(self, K, tmp_path, tiny_params):
        ckpt = tmp_path / "tiny.ckpt"
        save_checkpoint(str(ckpt), tiny_params)
        app.dependency_overrides[get_model_handler] = lambda: ModelHandler(str(ckpt))
        try:
            client = TestClient(app)
            ok = client.post("/estimate", json=_payload(K, n=4, method="dbox"))
            assert ok.status_code in (200, 422)
            mismatch = client.post("/estimate", json=_payload(K, n=6, method="dbox"))
            assert mismatch.status_code == 409
        finally:
            app.dependency_overrides.clear()


class TestEvaluate:
    @pytest.mark.parametrize("suffix", [".odmd.jsonl", ".odmd.bin"])
    def test_upload(self, client, tmp_path, small_set, suffix):
        files = {"file": (f"small{suffix}", io.BytesIO(_dataset_bytes(tmp_path, small_set, suffix)))}
        response = client.post("/evaluate", files=files, data={"method": "box-ls"})
        assert response.status_code == 200
        body = response.json()
        assert body["method"] == "box-ls"
        assert body["sets"][0]["count"] == 40
        assert "records" not in body

    def test_include_records(self, client, tmp_path, small_set):
        files = {"file": ("small.odmd.jsonl", io.BytesIO(_dataset_bytes(tmp_path, small_set)))}
        body = client.post("/evaluate", files=files, data={"include_records": "true"}).json()
        assert len(body["records"]) == 40

    def test_bad_suffix(self, client):
        files = {"file": ("small.csv", io.BytesIO(b"a,b\n"))}
        assert client.post("/evaluate", files=files).status_code == 400

    def test_malformed_upload(self, client):
        files = {"file": ("broken.odmd.jsonl", io.BytesIO(b"{not json\n"))}
        response = client.post("/evaluate", files=files)
        assert response.status_code == 400
        assert "line 1" in response.json()["detail"]
