"""The end-to-end comparison: full stack versus pose-only baseline.

Generates 3 subjects (94.7, 74.3, 57.7 kg) x 4 motions x 45 s, i.e. 5,400
aligned frames at 10 fps; trains all four networks with the same learning
rate, batch size and epoch count; scores the held-out test windows. Expect
about half an hour on one CPU core with the default 5 epochs.

Run:  python3 demos/04_benchmark.py [--epochs N] [--out DIR]
"""
import argparse
import time

from pressim.pipeline import BenchmarkConfig, run_benchmark


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--epochs", type=int, default=BenchmarkConfig.epochs)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="benchmark_out",
                        help="checkpoints, report.csv/txt and training histories go here")
    args = parser.parse_args()

    t0 = time.perf_counter()

    def log(net, history):
        print(f"[{time.perf_counter() - t0:7.0f} s] {net.kind.name:<8} epoch {net.epoch}: "
              f"val MSE {history.val_mse[-1]:.2e}", flush=True)

    result = run_benchmark(BenchmarkConfig(epochs=args.epochs, seed=args.seed), args.out, log)
    print(f"\n{result.aligned_frames} aligned frames, {len(result.dataset)} windows; "
          f"stage times: " + ", ".join(f"{k} {v:.0f} s" for k, v in result.seconds.items()))
    print(result.report.to_text())
    base, ours = result.report.row("baseline"), result.report.row("pressim")
    print(f"binarized R2 gap {ours.binarized_r2 - base.binarized_r2:+.3f}, "
          f"corrected R2 gap {ours.corrected_r2 - base.corrected_r2:+.3f}")


if __name__ == "__main__":
    main()
