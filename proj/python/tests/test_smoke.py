import numpy as np
import pytest

import flowcast as fc

SCENE = {"height": 16, "width": 32, "size_min": 4, "size_max": 8, "n_objects_min": 1, "n_objects_max": 2,
         "velocity_u": [-2, 2], "velocity_v": [-1, 1], "frames": 14}


def rect(h, w, x0, y0, x1, y1):
    m = np.zeros((h, w), np.uint8)
    m[y0:y1, x0:x1] = 1
    return m


def test_flow_round_trip(tmp_path):
    flow = np.stack(np.meshgrid(np.arange(3), np.arange(2)), -1).astype(np.float32)
    fc.flow_write(tmp_path / "a.flo", flow)
    assert (tmp_path / "a.flo").stat().st_size == 12 + 2 * 3 * 8
    np.testing.assert_array_equal(fc.flow_read(tmp_path / "a.flo"), flow)
    (tmp_path / "bad.flo").write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(fc.FormatError):
        fc.flow_read(tmp_path / "bad.flo")


def test_exact_examples():
    assert fc.bbox_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-12)
    assert fc.mask_iou(rect(6, 6, 0, 0, 2, 2), rect(6, 6, 1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-12)
    assert fc.dice_loss(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(1 / 3, abs=1e-12)
    assert fc.loss_flow(np.array([[[[1.0, 0.0]]]], np.float32), np.zeros((1, 1, 1, 2), np.float32)) == 0.5
    big = {"mask": rect(300, 300, 0, 0, 50, 50), "score": 0.9}
    assert fc.rescore(big) == pytest.approx(0.4)


def test_warps():
    m = rect(10, 12, 2, 3, 5, 6)
    zero = np.zeros((10, 12, 2), np.float32)
    np.testing.assert_array_equal(fc.warp_mask(m, zero), m)
    np.testing.assert_array_equal(fc.copy_last(m), m)
    flow = np.zeros((10, 12, 2), np.float32)
    flow[..., 0] = 2
    np.testing.assert_array_equal(fc.warp_mask(m, flow), rect(10, 12, 4, 3, 7, 6))
    np.testing.assert_array_equal(fc.shift_mask(m, flow), fc.warp_mask(m, flow))
    with pytest.raises(fc.ShapeError):
        fc.warp_mask(m, np.zeros((4, 4, 2), np.float32))


def test_metrics():
    gt = [[{"mask": rect(8, 8, 0, 0, 3, 3), "class_id": 2}]]
    ap = fc.average_precision([[{"mask": rect(8, 8, 0, 0, 3, 3), "class_id": 2, "score": 0.9}]], gt)
    assert ap["ap"] == pytest.approx(1.0)
    sem = fc.fuse_semantic([{"mask": rect(8, 8, 0, 0, 3, 3), "class_id": 2, "score": 0.9}], 8, 8)
    assert sem.sum() == 18
    assert fc.semantic_iou(sem, sem)["mean"] == 1.0
    mse = fc.flow_mse(np.ones((2, 4, 4, 2), np.float32), np.zeros((2, 4, 4, 2), np.float32))
    assert mse == [(1.0, 1.0, 1.0), (1.0, 1.0, 1.0)]


def test_generate_and_models(tmp_path):
    s = fc.generate(SCENE, seed=3)
    assert s["flows"].shape == (13, 16, 32, 2)
    assert s["semantics"].shape == (14, 16, 32)
    assert len(s["instances"]) == 14
    manifest = fc.emit_dataset(tmp_path / "data", 2, SCENE)
    assert manifest.endswith("manifest.jsonl")

    ofnet = fc.new_forecaster({"sequence_length": 3, "feature_channels": 4, "base_width": 4, "hidden_channels": 4,
                               "height": 16, "width": 32}, seed=1)
    out = ofnet.rollout(s["flows"][:3], 2)
    assert out.shape == (2, 16, 32, 2)
    assert np.isfinite(out).all()
    ofnet.save(str(tmp_path / "o.ckpt"))
    np.testing.assert_array_equal(fc.FlowForecaster.load(str(tmp_path / "o.ckpt")).rollout(s["flows"][:3], 2), out)

    warper = fc.new_warper({"base_width": 4, "height": 16, "width": 32}, seed=2)
    inst = s["instances"][0][0]
    prob, mask = warper.predict(s["flows"][0], s["semantics"][0], inst["mask"])
    assert prob.shape == (16, 32)
    assert ((prob > 0) & (prob < 1)).all()
    np.testing.assert_array_equal(mask, (prob > 0.5).astype(np.uint8))


def test_pipeline_baseline():
    cfg = fc.desk_config()
    assert cfg["horizon"] == "short"
    cfg.update(scene=dict(SCENE, seed=5), n_sequences=4, method="warp", eval_flow="oracle",
               ofnet=dict(cfg["ofnet"], sequence_length=3, height=16, width=32),
               masknet=dict(cfg["masknet"], height=16, width=32))
    report = fc.run_pipeline(cfg)
    assert report["steps"] == 3
    assert 0.0 <= report["iou"] <= 1.0
    with pytest.raises(fc.ConfigError):
        fc.run_pipeline(dict(cfg, horizon="never"))
