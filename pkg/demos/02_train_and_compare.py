"""Train the pressure-synthesis stack and the pose-only baseline on a small dataset.

1. record two subjects doing two motions (poses at 30 fps, mat at 10 fps);
2. align the streams, cut 10-frame windows and split them by contiguous blocks;
3. train TPN (pose -> pressure), TDN (deformation -> pressure), the
   pose-only BASELINE, and finally PSN on the frozen TPN/TDN outputs;
4. score both pipelines on the held-out windows.

This is a scaled-down version of ``pipeline.run_benchmark``; it takes a few
minutes on one CPU core. Run:  python3 demos/02_train_and_compare.py [--epochs N]
"""
import argparse
import time

from pressim import evalkit, pipeline
from pressim.datapipe import split
from pressim.nn import Hyperparams
from pressim.posekit import PAPER_SUBJECTS, MotionTemplate


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--duration", type=float, default=20.0, help="seconds per recording")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    t0 = time.perf_counter()
    recordings = [
        pipeline.record(subject, template, args.duration, seed=args.seed * 100 + i)
        for i, (subject, template) in enumerate(
            (s, t) for s in (PAPER_SUBJECTS[3], PAPER_SUBJECTS[5])
            for t in (MotionTemplate.SQUAT_CYCLE, MotionTemplate.SUPINE))
    ]
    ds = pipeline.window_dataset(recordings)
    parts = split(ds, seed=args.seed)
    print(f"{len(recordings)} recordings -> {len(ds.poses)} aligned frames -> {len(ds)} windows "
          f"({len(parts.train)} train / {len(parts.val)} val / {len(parts.test)} test, "
          f"{len(parts.guard)} held back as guard)  [{time.perf_counter() - t0:.0f} s]")

    def log(net, history):
        print(f"  {net.kind.name:<8} epoch {net.epoch}: train loss {history.train_loss[-1]:.2e}, "
              f"val MSE {history.val_mse[-1]:.2e}")

    schedule = pipeline.Schedule(Hyperparams(learning_rate=1e-4, batch_size=64,
                                             epochs=args.epochs, seed=args.seed))
    models, _ = pipeline.train_models(ds, parts, schedule, seed=args.seed, log=log)

    test = parts.test
    poses, deforms = ds.pose_windows(test), ds.deform_windows(test)
    report = evalkit.report([("baseline", pipeline.synthesize_baseline(models, poses)),
                             ("pressim", pipeline.synthesize(models, poses, deforms))],
                            ds.target_pressure(test), dataset="demo test split")
    print()
    print(report.to_text())
    print(f"total {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
