"""From a pose to a deformation profile and a reference pressure map.

Walks through the physics half of pressim:

1. build a skeleton and a subject, generate a short supine motion;
2. turn one frame into capsule solids and settle them on the spring mat;
3. rasterise the penetration into the 0-255 deformation profile and the
   reference pressure map (mmHg);
4. check the flat-patch closed form and recover the pressure/deformation
   scale alpha by least squares.

Run:  python3 demos/01_contact_simulation.py  [--pgm OUT_DIR]
"""
import argparse
from pathlib import Path

import numpy as np

from pressim import deformsim
from pressim.posekit import (PAPER_SUBJECTS, MotionSpec, MotionTemplate, body_geometry,
                             build_skeleton, generate_motion, validate_pose_sequence)

SHADES = " .:-=+*#%@"


def ascii_grid(grid, every=2):
    """Coarse text rendering of an 80x28 grid (rows downsampled by ``every``)."""
    top = max(float(grid.max()), 1e-12)
    rows = []
    for r in range(0, grid.shape[0], every):
        rows.append("".join(SHADES[min(len(SHADES) - 1, int(v / top * (len(SHADES) - 1)))]
                            for v in grid[r]))
    return "\n".join(rows)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pgm", type=Path, help="write the deformation frames as PGM images")
    args = parser.parse_args()

    subject = PAPER_SUBJECTS[0]
    skeleton = build_skeleton("coco17")
    print(f"subject {subject.id}: {subject.mass} kg, {subject.height} cm; "
          f"skeleton with {skeleton.num_joints} joints rooted at "
          f"{skeleton.joint_names[skeleton.root]}")

    seq = generate_motion(MotionSpec(MotionTemplate.SUPINE, 2.0, 30.0, seed=0), skeleton, subject)
    print(f"generated {len(seq)} supine frames; valid: {validate_pose_sequence(seq).ok}")

    # One frame in detail.
    body = body_geometry(seq.frames[0], skeleton, subject)
    result = deformsim.settle(body, deformsim.PlaneModel())
    print(f"\nframe 0: {len(body.capsules)} capsules settle {result.settle_depth * 1e3:.2f} mm "
          f"into the mat over {len(result.contact_cells)} cells "
          f"(force-balance residual {result.residual:.1e})")
    plane = deformsim.PlaneModel()
    deformation = deformsim.rasterize_deformation(result, plane)
    pressure = deformsim.reference_pressure(result, plane)
    print(f"deformation max {deformation.max()} / 255, pressure max {pressure.max():.0f} mmHg")
    print(ascii_grid(deformation))

    # The whole sequence, and its PGM dump.
    sim = deformsim.simulate_sequence(seq, subject)
    print(f"\nsimulated {len(sim)} frames; frames without contact: {int(sim.no_contact.sum())}")
    if args.pgm:
        args.pgm.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(sim.deformation):
            deformsim.write_pgm(args.pgm / f"deform_{i:04d}.pgm", frame)
        print(f"wrote {len(sim)} PGM files to {args.pgm}")

    # Flat patch: 74.3 kg on 100 cells with k = 1e3 N/m settles m g / (100 k).
    cells = [(r, c) for r in range(30, 40) for c in range(9, 19)]
    flat = deformsim.settle(deformsim.flat_patch(cells, 74.3, plane), plane)
    value = deformsim.rasterize_deformation(flat, plane)[35, 12]
    print(f"\nflat patch: d = {flat.settle_depth * 1e3:.4f} mm "
          f"(closed form {74.3 * 9.81 / 1e5 * 1e3:.4f} mm), rendered value {value}")

    # Least-squares scale between pressure and deformation, frame by frame.
    alphas = [deformsim.alpha_estimate(p, d) for p, d in zip(sim.pressure, sim.deformation)]
    print(f"alpha (mmHg per deformation unit) over the sequence: "
          f"mean {np.mean(alphas):.2f}, range {min(alphas):.2f} .. {max(alphas):.2f}")


if __name__ == "__main__":
    main()
