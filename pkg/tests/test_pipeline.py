import numpy as np
import pytest

from pressim import pipeline
from pressim.nn import NetworkKind, build_model
from pressim.posekit import PAPER_SUBJECTS, MotionTemplate

TINY = pipeline.BenchmarkConfig(subjects=PAPER_SUBJECTS[:2],
                                templates=(MotionTemplate.SQUAT_CYCLE, MotionTemplate.SUPINE),
                                duration=2.5, epochs=1, batch_size=16)


def test_record_rates_and_determinism():
    a = pipeline.record(PAPER_SUBJECTS[0], "stand_sway", 3.0, seed=4)
    b = pipeline.record(PAPER_SUBJECTS[0], "stand_sway", 3.0, seed=4)
    assert len(a.poses) == 90 and len(a.deformation) == 90 and len(a.pressure) == 30
    assert a.pressure.timestamps.tobytes() == b.pressure.timestamps.tobytes()
    assert a.deformation.frames.tobytes() == b.deformation.frames.tobytes()
    jitter = a.pressure.timestamps - a.poses.timestamps[::3]
    assert np.abs(jitter).max() <= 0.004 and np.any(jitter != 0)
    assert a.pose_file().frames.dtype == np.float32


def test_window_dataset_counts_and_alignment():
    recs = [pipeline.record(s, "squat_cycle", 2.0, seed=i) for i, s in enumerate(PAPER_SUBJECTS[:2])]
    ds = pipeline.window_dataset(recs)
    assert len(ds) == 2 * (20 - 10)
    # 3:1 alignment: aligned frame k uses pose frame 3k.
    np.testing.assert_array_equal(ds.poses[:20], recs[0].poses.frames[::3])


def test_models_container_and_names():
    m = pipeline.Models()
    assert list(m.items()) == []
    m.set(build_model("tdn"))
    assert m.get("tdn") is m.tdn and [k for k, _ in m.items()] == [NetworkKind.TDN]
    assert pipeline.checkpoint_name(NetworkKind.BASELINE) == "baseline.ckpt"


def test_to_mmhg_clips_to_sensor_range():
    np.testing.assert_array_equal(pipeline.to_mmhg([-0.1, 0.0, 0.5, 1.0, 2.0]),
                                  [0.0, 0.0, 2500.0, 5000.0, 5000.0])


def test_psn_requires_stack():
    ds = pipeline.window_dataset([pipeline.record(PAPER_SUBJECTS[0], "supine", 2.0, seed=1)])
    from pressim.datapipe import split
    with pytest.raises(ValueError):
        pipeline.train_models(ds, split(ds), pipeline.Schedule(), kinds=["psn"])


def test_schedule_per_kind():
    s = pipeline.Schedule(epochs={NetworkKind.TDN: 3})
    assert s.for_kind("tdn").epochs == 3 and s.for_kind("tpn").epochs == s.hyper.epochs
    assert s.for_kind("psn").seed == s.hyper.seed + 2


def test_tiny_benchmark_is_bit_identical(tmp_path):
    a = pipeline.run_benchmark(TINY, out_dir=tmp_path / "a")
    b = pipeline.run_benchmark(TINY, out_dir=tmp_path / "b")
    assert a.aligned_frames == 4 * 25
    for name in ("tpn.ckpt", "tdn.ckpt", "psn.ckpt", "baseline.ckpt", "report.csv",
                 "history_psn.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert a.checkpoints == b.checkpoints
    assert [r.model for r in a.report.rows] == ["baseline", "pressim"]
    assert a.report.frames == len(a.split.test)
