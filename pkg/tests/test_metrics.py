import numpy as np
import pytest
from oracles import (
    ap_steps,
    auroc_pairs,
    f1_sweep,
    iou_sweep,
    pro_sweep,
    random_instance,
    random_map_instance,
    regions_bfs,
)

from headclip.metrics import (
    MetricError,
    auroc,
    average_precision,
    compute_report,
    f1_max,
    iou_max,
    label_regions,
    pixel_metrics,
    pro,
    pro_curve,
)


def test_auroc_examples():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    with pytest.raises(MetricError):
        auroc([0.1, 0.2], [1, 1])


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert average_precision([0.9, 0.8], [0, 1]) == pytest.approx(0.5)
    assert average_precision([0.3, 0.1], [1, 1]) == 1.0
    with pytest.raises(MetricError):
        average_precision([0.3, 0.1], [0, 0])


def test_f1_examples():
    assert f1_max([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert f1_max([0.2, 0.9], [1, 0]) == pytest.approx(2 / 3)
    assert f1_max([0.2, 0.9], [1, 1]) == 1.0


def test_iou_examples():
    assert iou_max([[0.9, 0.1], [0.8, 0.0]], [[1, 0], [1, 0]]) == 1.0
    assert iou_max([1.0, 1.0, 0.0, 0.0], [1, 0, 0, 0]) == 0.5
    with pytest.raises(MetricError):
        iou_max([0.1, 0.2], [0, 0])


def test_iou_lowest_threshold_predicts_everything():
    # thresholds are the observed scores, so the lowest one selects every pixel
    assert iou_max([1.0, 0.0], [0, 1]) == pytest.approx(0.5)
    assert iou_max([1.0, 1.0], [0, 1]) == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(40))
def test_scalar_metrics_match_oracles(seed):
    rng = np.random.default_rng(seed)
    s, y = random_instance(rng, int(rng.integers(2, 65)))
    assert abs(auroc(s, y) - auroc_pairs(s, y)) < 1e-10
    assert abs(average_precision(s, y) - ap_steps(s, y)) < 1e-10
    assert abs(f1_max(s, y) - f1_sweep(s, y)) < 1e-10
    assert abs(iou_max(s, y) - iou_sweep(s, y)) < 1e-10


@pytest.mark.parametrize("seed", range(20))
def test_pro_matches_component_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    maps, masks = random_map_instance(rng, int(rng.integers(2, 9)), int(rng.integers(2, 9)), 1)
    assert abs(pro(maps, masks) - pro_sweep(maps, masks)) < 1e-10


def test_pro_perfect_map():
    mask = np.zeros((6, 6))
    mask[1:3, 1:3] = 1
    mask[4, 4] = 1
    assert pro(mask, mask) == pytest.approx(1.0)


def test_pro_uniform_map_follows_diagonal():
    # one threshold: the curve jumps from (0, 0) to (1, 1); area up to 0.3 is 0.3**2 / 2
    mask = np.zeros((4, 4))
    mask[0, 0] = 1
    fpr, overlap = pro_curve(np.full((4, 4), 0.5), mask)
    np.testing.assert_array_equal(fpr, [0.0, 1.0])
    np.testing.assert_array_equal(overlap, [0.0, 1.0])
    assert pro(np.full((4, 4), 0.5), mask) == pytest.approx(0.15)


def test_pro_two_single_pixel_regions_hand_oracle():
    mask = np.zeros((4, 4))
    mask[0, 0] = mask[3, 3] = 1
    amap = np.arange(16, dtype=float).reshape(4, 4) / 15.0
    amap[0, 0], amap[3, 3] = 1.0, 0.5
    assert pro(amap, mask) == pytest.approx(pro_sweep(amap[None], mask[None].astype(bool)), abs=1e-12)


def test_regions_match_flood_fill():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = rng.random((7, 9)) < 0.45
        labels, count = label_regions(m[None])
        comps = regions_bfs(m)
        assert count == len(comps)
        for comp in comps:
            ids = {labels[0][a, b] for a, b in comp}
            assert len(ids) == 1


def test_regions_numbered_across_images():
    m = np.zeros((2, 3, 3))
    m[0, 0, 0] = m[1, 2, 2] = 1
    labels, count = label_regions(m)
    assert count == 2 and labels[0, 0, 0] != labels[1, 2, 2]


def test_pro_requires_regions():
    with pytest.raises(MetricError):
        pro(np.zeros((3, 3)), np.zeros((3, 3)))


def test_report_identity_maps_are_perfect():
    masks = np.zeros((4, 8, 8))
    masks[2, 2:5, 2:5] = 1
    masks[3, 0:2, 6:8] = 1
    labels = [0, 0, 1, 1]
    report = compute_report(np.array(labels, dtype=float), labels, masks, masks)
    assert report.image_level["mad"] == 1.0
    assert report.pixel_level["mad"] == 1.0
    assert report.positive_images == 2 and report.anomalous_pixels == 13
    assert "pixel.mad = 1.0000000000" in report.to_text()


def test_report_rejects_single_class():
    with pytest.raises(MetricError):
        compute_report([0.1, 0.2], [0, 0], np.zeros((2, 4, 4)), np.zeros((2, 4, 4)))


def test_random_scores_near_half():
    values = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        values.append(auroc(rng.uniform(size=10_000), rng.random(10_000) < 0.5))
    assert all(0.45 <= v <= 0.55 for v in values)


def test_per_image_pixel_mode():
    masks = np.zeros((2, 4, 4))
    masks[0, 0, :2] = 1
    masks[1, 3, 3] = 1
    maps = masks * 0.9 + 0.05
    out = pixel_metrics(maps, masks, pooled=False)
    assert out["auroc"] == 1.0 and set(out) == {"auroc", "pro", "ap", "f1_max", "iou_max", "mad"}
