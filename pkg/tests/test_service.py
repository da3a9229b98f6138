import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from herbseg import raster
from herbseg.prompting import DetectorConfig, MaskOracleDetector
from herbseg.segmentation import PipelineConfig, RegionGrowingSegmenter, segment_image
from herbseg.service import ApiError, JobRecord, ServiceStore, create_app

import sheetgen


def png_to_mask(content: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(content)) as im:
        return np.asarray(im.convert("L")) > 0


@pytest.fixture
def data_dir(tmp_path):
    root = tmp_path / "data"
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir(parents=True)
    image, stencil = sheetgen.make_sheet(300, 260, n_components=3, seed=17)
    raster.save_image(root / "images" / "sheet.png", image)
    raster.save_mask(root / "masks" / "sheet.png", stencil)
    blob_img, plant, artifact = sheetgen.two_blob_patch(size=120, seed=6)
    raster.save_image(root / "images" / "blob.png", blob_img)
    return root


@pytest.fixture
def client(data_dir):
    app = create_app(data_dir, workers=2)
    with TestClient(app) as c:
        c.store = app.state.store
        yield c


class TestJobs:
    def test_happy_path_matches_direct_pipeline(self, client, data_dir):
        resp = client.post("/jobs", json={"image_id": "sheet", "detector": "oracle",
                                          "segmenter": "reference"})
        assert resp.status_code == 200
        job_id = resp.json()["job_id"]
        job = client.store.wait_for_job(job_id)
        assert job.state == "done"
        record = client.get(f"/jobs/{job_id}").json()
        assert record["state"] == "done"
        assert record["mask"] == f"/jobs/{job_id}/mask"
        served = png_to_mask(client.get(f"/jobs/{job_id}/mask").content)

        image = raster.load_image(data_dir / "images" / "sheet.png")
        truth = raster.load_mask(data_dir / "masks" / "sheet.png")
        direct = segment_image(image, MaskOracleDetector(truth, DetectorConfig()),
                               RegionGrowingSegmenter(), PipelineConfig())
        np.testing.assert_array_equal(served, direct)

    def test_two_submits_identical_masks(self, client):
        ids = []
        for _ in range(2):
            resp = client.post("/jobs", json={"image_id": "sheet", "detector": "oracle"})
            ids.append(resp.json()["job_id"])
        masks = []
        for job_id in ids:
            client.store.wait_for_job(job_id)
            masks.append(png_to_mask(client.get(f"/jobs/{job_id}/mask").content))
        np.testing.assert_array_equal(masks[0], masks[1])

    def test_unknown_backend_rejected_before_enqueue(self, client):
        resp = client.post("/jobs", json={"image_id": "sheet", "segmenter": "magic"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "validation"
        resp = client.post("/jobs", json={"image_id": "sheet", "strategy": "mosaic"})
        assert resp.status_code == 400
        resp = client.post("/jobs", json={"image_id": "sheet", "detector": "psychic"})
        assert resp.status_code == 400

    def test_unknown_image_404(self, client):
        resp = client.post("/jobs", json={"image_id": "ghost"})
        assert resp.status_code == 404
        assert resp.json()["code"] == "not_found"

    def test_oracle_without_truth_mask_rejected(self, client):
        resp = client.post("/jobs", json={"image_id": "blob", "detector": "oracle"})
        assert resp.status_code == 400
        assert "mask" in resp.json()["message"]

    def test_unknown_job_404(self, client):
        assert client.get("/jobs/nope").status_code == 404

    def test_mask_of_unfinished_job_conflicts(self, client):
        client.store.jobs["stuck"] = JobRecord(job_id="stuck", image_id="sheet",
                                               strategy="multi_region",
                                               detector="oracle", segmenter="reference")
        resp = client.get("/jobs/stuck/mask")
        assert resp.status_code == 409
        assert resp.json()["code"] == "state_conflict"

    def test_body_validation_is_400(self, client):
        resp = client.post("/jobs", json={"strategy": "multi_region"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "validation"


class TestSessions:
    @staticmethod
    def blob_centers():
        _, plant, artifact = sheetgen.two_blob_patch(size=120, seed=6)
        pys, pxs = np.nonzero(plant)
        ays, axs = np.nonzero(artifact)
        return ((int(pxs.mean()), int(pys.mean())),
                (int(axs.mean()), int(ays.mean())), plant, artifact)

    def test_open_empty_session(self, client):
        resp = client.post("/sessions", json={"image_id": "blob", "seed": "empty"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["mask_version"] == 0
        assert body["status"] == "active"
        mask = png_to_mask(client.get(f"/sessions/{body['session_id']}/mask").content)
        assert not mask.any()

    def test_seed_from_job_equals_job_mask(self, client):
        job_id = client.post("/jobs", json={"image_id": "sheet", "detector": "oracle"}
                             ).json()["job_id"]
        client.store.wait_for_job(job_id)
        job_mask = png_to_mask(client.get(f"/jobs/{job_id}/mask").content)
        sid = client.post("/sessions", json={"image_id": "sheet",
                                             "seed": f"job:{job_id}"}).json()["session_id"]
        seeded = png_to_mask(client.get(f"/sessions/{sid}/mask").content)
        np.testing.assert_array_equal(seeded, job_mask)

    def test_bad_seed_rejected(self, client):
        resp = client.post("/sessions", json={"image_id": "blob", "seed": "yesterday"})
        assert resp.status_code == 400
        resp = client.post("/sessions", json={"image_id": "blob", "seed": "job:nope"})
        assert resp.status_code == 404

    def test_positive_point_grows_monotonically(self, client):
        (px, py), _, plant, _ = self.blob_centers()
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        before = png_to_mask(client.get(f"/sessions/{sid}/mask").content)
        resp = client.post(f"/sessions/{sid}/points",
                           json={"x": px, "y": py, "polarity": "positive"})
        assert resp.json() == {"mask_version": 1}
        after = png_to_mask(client.get(f"/sessions/{sid}/mask").content)
        assert not (before & ~after).any()      # never shrinks
        assert (after & plant).sum() == plant.sum()
        assert after.sum() > before.sum()

    def test_negative_point_shrinks_monotonically(self, client):
        (px, py), (ax, ay), plant, artifact = self.blob_centers()
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        client.post(f"/sessions/{sid}/points",
                    json={"x": px, "y": py, "polarity": "positive"})
        client.post(f"/sessions/{sid}/points",
                    json={"x": ax, "y": ay, "polarity": "positive"})
        grown = png_to_mask(client.get(f"/sessions/{sid}/mask").content)
        assert (grown & artifact).any()
        resp = client.post(f"/sessions/{sid}/points",
                           json={"x": ax, "y": ay, "polarity": "negative"})
        carved = png_to_mask(client.get(f"/sessions/{sid}/mask").content)
        assert not (carved & ~grown).any()      # never grows
        assert not (carved & artifact).any()
        assert (carved & plant).sum() == plant.sum()
        assert resp.json()["mask_version"] == 3

    def test_undo_restores_bit_exact(self, client):
        (px, py), (ax, ay), _, _ = self.blob_centers()
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        client.post(f"/sessions/{sid}/points",
                    json={"x": px, "y": py, "polarity": "positive"})
        v1 = png_to_mask(client.get(f"/sessions/{sid}/mask").content)
        client.post(f"/sessions/{sid}/points",
                    json={"x": ax, "y": ay, "polarity": "positive"})
        resp = client.post(f"/sessions/{sid}/undo")
        assert resp.status_code == 200
        restored = png_to_mask(client.get(f"/sessions/{sid}/mask").content)
        np.testing.assert_array_equal(restored, v1)

    def test_versions_stay_addressable(self, client):
        (px, py), _, _, _ = self.blob_centers()
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        client.post(f"/sessions/{sid}/points",
                    json={"x": px, "y": py, "polarity": "positive"})
        v0 = png_to_mask(client.get(f"/sessions/{sid}/mask",
                                    params={"version": 0}).content)
        assert not v0.any()
        assert client.get(f"/sessions/{sid}/mask",
                          params={"version": 99}).status_code == 404

    def test_undo_with_nothing_to_undo_conflicts(self, client):
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        assert client.post(f"/sessions/{sid}/undo").status_code == 409

    def test_out_of_bounds_point_rejected(self, client):
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        resp = client.post(f"/sessions/{sid}/points",
                           json={"x": 500, "y": 2, "polarity": "positive"})
        assert resp.status_code == 400

    def test_bad_polarity_rejected(self, client):
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        resp = client.post(f"/sessions/{sid}/points",
                           json={"x": 2, "y": 2, "polarity": "sideways"})
        assert resp.status_code == 400

    def test_accept_exports_and_freezes(self, client, data_dir):
        (px, py), _, _, _ = self.blob_centers()
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        client.post(f"/sessions/{sid}/points",
                    json={"x": px, "y": py, "polarity": "positive"})
        current = png_to_mask(client.get(f"/sessions/{sid}/mask").content)
        assert client.post(f"/sessions/{sid}/accept").status_code == 200
        exported = raster.load_mask(data_dir / "exports" / f"{sid}.png")
        np.testing.assert_array_equal(exported, current)
        assert client.store.get_session(sid)._undo == []
        # accepted sessions are immutable and their undo stack is gone
        assert client.post(f"/sessions/{sid}/accept").status_code == 409
        assert client.post(f"/sessions/{sid}/undo").status_code == 409
        assert client.post(f"/sessions/{sid}/points",
                           json={"x": 1, "y": 1, "polarity": "positive"}).status_code == 409
        assert client.post(f"/sessions/{sid}/tag",
                           json={"tag": "usable"}).status_code == 409

    def test_tag_then_list_by_tag(self, client):
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        other = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        assert client.post(f"/sessions/{sid}/tag",
                           json={"tag": "unusable"}).status_code == 200
        listed = client.get("/sessions", params={"tag": "unusable"}).json()
        assert [row["session_id"] for row in listed] == [sid]
        everything = client.get("/sessions").json()
        assert {row["session_id"] for row in everything} >= {sid, other}

    def test_bad_tag_rejected(self, client):
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        assert client.post(f"/sessions/{sid}/tag",
                           json={"tag": "meh"}).status_code == 400

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/ghost").status_code == 404
        assert client.post("/sessions/ghost/undo").status_code == 404

    def test_replay_reproduces_current_mask(self, client):
        (px, py), (ax, ay), _, _ = self.blob_centers()
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        for x, y, pol in ((px, py, "positive"), (ax, ay, "positive"),
                          (ax, ay, "negative"), (px + 2, py - 1, "positive")):
            client.post(f"/sessions/{sid}/points",
                        json={"x": x, "y": y, "polarity": pol})
        session = client.store.get_session(sid)
        np.testing.assert_array_equal(session.replay(), session.current_mask)

    def test_redo_inverts_undo(self, client):
        (px, py), _, _, _ = self.blob_centers()
        sid = client.post("/sessions", json={"image_id": "blob"}).json()["session_id"]
        client.post(f"/sessions/{sid}/points",
                    json={"x": px, "y": py, "polarity": "positive"})
        session = client.store.get_session(sid)
        grown = session.current_mask.copy()
        session.undo()
        assert not session.current_mask.any()
        session.redo()
        np.testing.assert_array_equal(session.current_mask, grown)
        np.testing.assert_array_equal(session.replay(), session.current_mask)

    def test_undo_depth_is_bounded(self, client, data_dir):
        store = client.store
        session = store.open_session("blob")
        session.undo_depth = 3
        (px, py), _, _, _ = self.blob_centers()
        for i in range(5):
            session.apply_point(px + i, py, "positive")
        assert len(session._undo) == 3

    def test_concurrent_points_are_serialized(self, client):
        import threading

        (px, py), (ax, ay), _, _ = self.blob_centers()
        session = client.store.open_session("blob")
        points = [(px + dx, py + dy, "positive")
                  for dx in (-2, 0, 2) for dy in (-2, 0, 2)] + [(ax, ay, "positive")]
        threads = [threading.Thread(target=session.apply_point, args=p)
                   for p in points]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert session.version == len(points)
        assert len(session.prompt_history) == len(points)
        # the recorded total order replays to the exact current mask
        np.testing.assert_array_equal(session.replay(), session.current_mask)


class TestPersistence:
    def test_restart_restores_sessions(self, data_dir):
        store = ServiceStore(data_dir, workers=1)
        session = store.open_session("blob")
        _, plant, _ = sheetgen.two_blob_patch(size=120, seed=6)[0:3]
        ys, xs = np.nonzero(plant)
        session.apply_point(int(xs.mean()), int(ys.mean()), "positive")
        session.tag_usability("usable")
        sid, version = session.session_id, session.version
        mask = session.current_mask.copy()

        reborn = ServiceStore(data_dir, workers=1)
        restored = reborn.get_session(sid)
        assert restored.version == version
        assert restored.usability_tag == "usable"
        np.testing.assert_array_equal(restored.current_mask, mask)
        # still usable: undo works across restarts
        restored.undo()
        assert not restored.current_mask.any()

    def test_image_endpoint_serves_bytes(self, data_dir):
        app = create_app(data_dir, workers=1)
        with TestClient(app) as client:
            resp = client.get("/images/sheet")
            assert resp.status_code == 200
            assert resp.headers["content-type"] == "image/png"
            served = png_to_mask(resp.content)  # just proves it decodes
            assert served.shape == (260, 300)

    def test_api_error_shape(self, data_dir):
        app = create_app(data_dir, workers=1)
        with TestClient(app) as client:
            body = client.get("/images/ghost").json()
            assert set(body) == {"code", "message"}
