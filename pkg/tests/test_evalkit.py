import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from pressim import evalkit
from pressim.errors import AllFramesEmpty, LengthMismatch


def random_pair(rng, n=5, shape=(80, 28)):
    gt = np.where(rng.random((n, *shape)) < 0.3, rng.uniform(0, 5000, (n, *shape)), 0.0)
    pred = np.where(rng.random((n, *shape)) < 0.5, gt + rng.normal(0, 80, gt.shape), 0.0)
    return pred, gt


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_metrics_match_loop_oracles(seed, n):
    rng = np.random.default_rng(seed)
    pred, gt = random_pair(rng, n, (8, 6))
    gt[0, 0, 0] = 1.0  # at least one contact cell
    gt[0, 0, 1] = 2.0  # and non-zero masked variance
    assert abs(evalkit.mae(pred, gt) - oracles.mae(pred, gt)) < 1e-9
    assert abs(evalkit.binarized_r_squared(pred, gt) - oracles.binarized_r2(pred, gt)) < 1e-9
    assert abs(evalkit.mask_rmsd(pred, gt) - oracles.mask_rmsd(pred, gt)) < 1e-9
    assert abs(evalkit.corrected_r2(pred, gt) - oracles.corrected_r2(pred, gt)) < 1e-9


def test_perfect_prediction():
    gt = np.zeros((2, 80, 28))
    gt[:, 10:20, 5:9] = np.arange(40).reshape(10, 4) + 1
    assert evalkit.mae(gt, gt) == 0
    assert evalkit.mask_rmsd(gt, gt) == 0
    assert evalkit.corrected_r2(gt, gt) == 1
    assert evalkit.binarized_r_squared(gt, gt) == 1


def test_empty_ground_truth_frame_rules():
    gt = np.zeros((1, 80, 28))
    assert evalkit.binarized_r_squared(gt, gt) == 1.0
    pred = gt.copy()
    pred[0, 3, 3] = 1.0
    assert evalkit.binarized_r_squared(pred, gt) == 0.0
    with pytest.raises(AllFramesEmpty):
        evalkit.mask_rmsd(pred, gt)
    with pytest.raises(AllFramesEmpty):
        evalkit.corrected_r2(pred, gt)


def test_degenerate_frames_are_skipped_and_counted(rng):
    pred, gt = random_pair(rng, 3)
    gt[1] = 0.0  # empty mask
    gt[2] = np.where(gt[2] > 0, 7.0, 0.0)  # flat mask
    row = evalkit.evaluate_model("m", pred, gt)
    assert (row.empty_mask_frames, row.flat_mask_frames) == (1, 1)
    assert row.corrected_r2 == pytest.approx(oracles.corrected_r2(pred[:1], gt[:1]))
    assert row.mask_rmsd == pytest.approx(oracles.mask_rmsd(pred[[0, 2]], gt[[0, 2]]))
    assert "1 empty-mask and 1 zero-variance" in evalkit.report([("m", pred)], gt).to_text()


def test_contact_mask_order():
    gt = np.zeros((80, 28))
    gt[5, 3] = gt[2, 7] = gt[2, 1] = 1.0
    m = evalkit.contact_mask(gt, frame=4)
    assert m.indices == ((2, 1), (2, 7), (5, 3)) and m.frame == 4 and len(m) == 3


def test_length_mismatch(rng):
    pred, gt = random_pair(rng, 3)
    with pytest.raises(LengthMismatch):
        evalkit.mae(pred[:2], gt)
    with pytest.raises(evalkit.ModelMetricError) as err:
        evalkit.report([("good", pred), ("short", pred[:2])], gt)
    assert err.value.model == "short"


def test_single_frame_inputs(rng):
    pred, gt = random_pair(rng, 1)
    assert evalkit.mae(pred[0], gt[0]) == evalkit.mae(pred, gt)


def test_report_csv_and_text(rng):
    pred, gt = random_pair(rng, 4)
    rep = evalkit.report([("pressim", pred), ("baseline", np.zeros_like(gt))], gt, "demo")
    lines = rep.to_csv().splitlines()
    assert lines[0] == evalkit.CSV_HEADER
    assert lines[1].startswith("pressim,") and lines[2].startswith("baseline,")
    assert float(lines[1].split(",")[1]) == rep.row("pressim").mae
    assert lines[1].endswith(",4")
    text = rep.to_text()
    assert "dataset: demo" in text and "Binarized R2" in text
    assert rep.row("baseline").binarized_r2 == pytest.approx(
        oracles.binarized_r2(np.zeros_like(gt), gt))
    with pytest.raises(KeyError):
        rep.row("other")
