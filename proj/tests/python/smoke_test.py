"""Python smoke tests for the compiled module."""

import json
import math
import sys

import stgd


def approx(a, b, tol=1e-9):
    assert abs(a - b) < tol, f"{a} != {b} (tol {tol})"


def test_geometry():
    unit = [0, 0, 0, 1, 1, 1, 0.0]
    approx(stgd.iou_bev(unit, unit), 1.0)
    shifted = [0.5, 0, 0, 1, 1, 1, 0.0]
    approx(stgd.iou_bev(unit, shifted), 1.0 / 3.0)
    approx(stgd.iou_3d(unit, [0, 0, 5, 1, 1, 1, 0.0]), 0.0)
    approx(stgd.giou_3d(unit, shifted), 1.0 / 3.0)
    approx(stgd.center_distance_bev(unit, [3, 4, 0, 1, 1, 1, 0.0]), 5.0)
    corners = stgd.bev_corners(unit)
    assert len(corners) == 4
    assert all(abs(abs(x) - 0.5) < 1e-12 for pt in corners for x in pt)
    try:
        stgd.iou_bev([0, 0, 0, -1, 1, 1, 0], unit)
        raise AssertionError("expected ValidationError")
    except stgd.ValidationError:
        pass


def test_selection():
    boxes = [[0, 0, 0, 2, 2, 2, 0.0], [0, 0, 0, 2, 2, 2, 0.0], [9, 9, 0, 2, 2, 2, 0.0]]
    scores = [0.9, 0.8, 0.3]
    updated = stgd.suppress_scores(boxes, scores, theta=0.5)
    approx(updated[0], 0.9)
    approx(updated[1], 0.0)  # 0.8 * (1 - IoU 1)
    approx(updated[2], 0.3)
    keep = stgd.select_nodes(boxes, scores, theta=0.5, n_keep=2)
    assert list(keep) == [0, 2]


def test_hungarian():
    pairs = stgd.hungarian([[1.0, 2.0], [2.0, 1.0]])
    assert sorted(pairs) == [(0, 0), (1, 1)]


def test_losses():
    approx(stgd.focal_term(0.3, True), 0.25 * 0.49 * -math.log(0.3), 1e-9)
    boxes = [[0, 0, 0, 2, 2, 2, 0.0], [0, 0, 0, 2, 2, 2, 0.0]]
    approx(stgd.iou_regularizer(boxes, [1.0, 1.0]), 2.0)


def test_recall():
    gt = [[0, 0, 0, 2, 2, 2, 0.0], [10, 0, 0, 2, 2, 2, 0.0]]
    recall, empty = stgd.recall_at(gt, gt, 0.5)
    approx(recall, 1.0)
    assert not empty
    recall, empty = stgd.recall_at([], [], 0.5)
    approx(recall, 1.0)
    assert empty


def test_op_counter():
    counts = stgd.op_counter(100, 50, 4.0, 3.0, 32)
    approx(counts["node_selection"], 100 * 100)
    approx(counts["dense_self_attention"], 100 * 100 * 32)
    assert counts["stga_total"] < counts["dense_self_attention"]


def test_pipeline_roundtrip():
    cfg = json.loads(stgd.default_config())
    cfg.update(t_frames=4, n_tracks=6, n_p=12, n_res=4, n_g=8, c=16, gru_grid=8)
    cfg_text = json.dumps(cfg)
    scene = stgd.simulate(cfg_text, seed=3)
    assert scene == stgd.simulate(cfg_text, seed=3)
    lines = [json.loads(line) for line in scene.splitlines() if line]
    assert len(lines) == 4
    assert all(len(b) == 7 for line in lines for b in line["boxes"])

    metrics = json.loads(stgd.run(cfg_text, seed=3, scene_jsonl=scene))
    assert metrics["aggregate"]["frames"] == 4
    assert 0.0 <= metrics["aggregate"]["mean_query_recall_05"] <= 1.0
    # identical inputs give identical documents
    assert stgd.run(cfg_text, 3, scene) == stgd.run(cfg_text, 3, scene)

    try:
        stgd.simulate(json.dumps({"bogus_key": 1}), seed=0)
        raise AssertionError("expected ValidationError")
    except stgd.ValidationError:
        pass


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok: {test.__name__}")
    print(f"{len(tests)} python smoke tests passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
