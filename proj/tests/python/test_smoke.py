"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import kpforge


def make_annotation(kps, size=224, bbox=None, tool="wrench"):
    return kpforge.SampleAnnotation(
        image="img.png",
        width=size,
        height=size,
        bbox=bbox or kpforge.BBox(0, 0, size, size),
        keypoints=[kpforge.Keypoint(n, x, y, v) for n, x, y, v in kps],
        tool=tool,
    )


def test_schema_channel_layout():
    schema = kpforge.KeypointSchema("wrench", ["left", "right", "pivot"], [["left", "right"]])
    assert schema.num_channels == 2
    assert schema.channel_names == ["left+right", "pivot"]
    with pytest.raises(ValueError):
        kpforge.KeypointSchema("wrench", ["a", "a"])


def test_render_targets_and_decode_roundtrip():
    schema = kpforge.KeypointSchema("wrench", ["tip", "butt"])
    ann = make_annotation([("tip", 100.0, 60.0, True), ("butt", 30.5, 200.25, True)])
    stack = kpforge.render_targets(ann, schema, 224)
    assert stack.shape == (2, 224, 224)
    assert stack[0, 60, 100] == 1.0
    assert stack.min() >= 0.0 and stack.max() <= 1.0

    detections = kpforge.decode_heatmaps(stack, schema, threshold=0.5)
    by_name = {d.name: d for d in detections}
    assert math.hypot(by_name["tip"].x - 100.0, by_name["tip"].y - 60.0) <= 1.0
    assert math.hypot(by_name["butt"].x - 30.5, by_name["butt"].y - 200.25) <= 1.0


def test_sigma_value_one_sigma_away():
    schema = kpforge.KeypointSchema("wrench", ["tip"])
    ann = make_annotation([("tip", 100.5, 60.0, True)])
    stack = kpforge.render_targets(ann, schema, 224)
    assert stack[0, 60, 104] == pytest.approx(math.exp(-0.5), abs=1e-6)


def test_pck_strict_boundary():
    schema = kpforge.KeypointSchema("wrench", ["tip"])
    ann = make_annotation([("tip", 100.0, 100.0, True)], bbox=kpforge.BBox(0, 0, 100, 50))
    close = [[kpforge.Detection("tip", 100.0, 109.9, 0.9)]]
    far = [[kpforge.Detection("tip", 100.0, 110.1, 0.9)]]
    assert kpforge.pck(close, [ann], schema, 0.1).pck == 1.0
    assert kpforge.pck(far, [ann], schema, 0.1).pck == 0.0
    curve = kpforge.pck_curve(close, [ann], schema, [0.05, 0.1, 0.2])
    assert [round(p.pck, 6) for p in curve] == sorted(round(p.pck, 6) for p in curve)


def test_split_dataset_partitions():
    schema = kpforge.KeypointSchema("wrench", ["tip"])
    anns = [make_annotation([("tip", 5.0 + i, 7.0, True)]) for i in range(10)]
    train, val = kpforge.split_dataset(anns, schema, 0.2, seed=7)
    assert len(train) == 8 and len(val) == 2
    train2, val2 = kpforge.split_dataset(anns, schema, 0.2, seed=7)
    assert [a.keypoints[0].x for a in val] == [a.keypoints[0].x for a in val2]


def test_blending_identities():
    rng = np.random.default_rng(3)
    fg = rng.uniform(0, 255, size=(64, 64, 3)).astype(np.float32)
    bg = rng.uniform(0, 255, size=(64, 64, 3)).astype(np.float32)
    half = np.full((64, 64), 0.5, np.float32)
    out = kpforge.alpha_blend(fg, half, bg)
    assert np.allclose(out, 0.5 * fg + 0.5 * bg, atol=1e-4)

    mask = np.zeros((64, 64), np.uint8)
    mask[24:40, 24:40] = 255
    same = kpforge.poisson_blend(fg, mask, fg)
    assert np.abs(same - fg).max() < 1e-3

    soft = np.zeros((64, 64), np.float32)
    soft[20:44, 20:44] = 1.0
    lap1 = kpforge.laplacian_blend(fg, soft, bg, levels=1)
    assert np.abs(lap1 - kpforge.alpha_blend(fg, soft, bg)).max() < 1e-6


def test_compose_identity(tmp_path):
    import cv2

    rgba = np.zeros((96, 96, 4), np.uint8)
    rgba[30:60, 20:80, 0] = 200  # blue in BGR order on disk
    rgba[30:60, 20:80, 3] = 255
    asset_png = tmp_path / "tool.png"
    cv2.imwrite(str(asset_png), rgba)
    (tmp_path / "tool.json").write_text(
        '{"tool":"bar","keypoints":[{"name":"tip","x":75,"y":45},{"name":"butt","x":25,"y":45}]}'
    )

    bg = np.full((96, 96, 3), 90, np.float32)
    result = kpforge.compose_sample(str(asset_png), bg, kpforge.CompositeSpec())
    assert result is not None
    image, mask, ann = result
    assert image.shape == (96, 96, 3)
    names = {kp.name: kp for kp in ann.keypoints}
    assert names["tip"].x == pytest.approx(75.0)
    assert names["butt"].x == pytest.approx(25.0)
    assert ann.bbox.x_min == 20 and ann.bbox.x_max == 80
    assert mask[45, 50] == pytest.approx(1.0)

    rejected = kpforge.compose_sample(
        str(asset_png), bg, kpforge.CompositeSpec(tx=1000.0))
    assert rejected is None


def test_model_forward_and_detect():
    schema = kpforge.KeypointSchema("wrench", ["tip", "butt"])
    model = kpforge.build_model("ihm56", schema.num_channels, input_size=64,
                                allow_random_backbone=True, seed=4)
    assert model.head_sizes == [4, 8, 16]

    rng = np.random.default_rng(0)
    image = rng.uniform(0, 255, size=(64, 64, 3)).astype(np.float32)
    stack = model.predict_stack(image, schema)
    assert stack.shape == (2, 16, 16)
    assert 0.0 < stack.min() and stack.max() < 1.0

    detections = model.detect(image, schema, threshold=0.0)
    assert {d.name for d in detections} == {"tip", "butt"}
    again = model.detect(image, schema, threshold=0.0)
    assert [(d.x, d.y) for d in detections] == [(d.x, d.y) for d in again]

    with pytest.raises(RuntimeError):
        kpforge.build_model("ihm56", 2, input_size=64)  # no pretrained weights


def test_generate_dataset(tmp_path):
    import cv2

    assets = tmp_path / "assets"
    bgs = tmp_path / "bgs"
    assets.mkdir()
    bgs.mkdir()
    rgba = np.zeros((96, 96, 4), np.uint8)
    rgba[40:56, 16:80, 1] = 180
    rgba[40:56, 16:80, 3] = 255
    cv2.imwrite(str(assets / "tool.png"), rgba)
    (assets / "tool.json").write_text(
        '{"tool":"bar","keypoints":[{"name":"tip","x":78,"y":48},{"name":"butt","x":18,"y":48}]}'
    )
    cv2.imwrite(str(bgs / "bg.png"),
                np.random.default_rng(1).uniform(0, 255, (128, 128, 3)).astype(np.uint8))

    samples = kpforge.generate_dataset(str(assets), str(bgs), str(tmp_path / "out"),
                                       count=3, seed=9, canvas=96)
    assert len(samples) == 3
    assert (tmp_path / "out" / "manifest.jsonl").exists()
    assert (tmp_path / "out" / "schema.json").exists()

    schema = kpforge.KeypointSchema.load(str(tmp_path / "out" / "schema.json"))
    root, loaded = kpforge.load_manifest(str(tmp_path / "out" / "manifest.jsonl"), schema)
    assert len(loaded) == 3
