#!/usr/bin/env python3
"""Generate the bridge-equivalence fixtures under frontend/fixtures/.

Builds a small synthetic route store with the CLI, then runs `squash
query` for five scan/pose pairs and records the expected endowed outputs.
The TypeScript bridge tests replay the same inputs through openStore() /
endow() and require bit-identical history channels.
"""
import argparse
import json
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from squash import (
    PointCloud,
    Pose6DoF,
    SceneSpec,
    generate_scene,
    random_kernel,
    save_hpc,
    save_kernel,
    save_route,
)
from squash.cli import main as squash_main
from squash.geometry import save_poses_csv


def yaw_pose(x, y, z, yaw_rad):
    c, s = math.cos(yaw_rad), math.sin(yaw_rad)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose6DoF(rot, np.array([x, y, z]))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out", default=Path(__file__).resolve().parent.parent / "frontend" / "fixtures"
    )
    args = parser.parse_args()
    out = Path(args.out)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)

    scene = generate_scene(
        SceneSpec(seed=21, n_persistent=6, n_transient=3, points_per_object=250,
                  n_traversals=3)
    )
    save_route(out / "route", "bridge-fixture-route", scene.traversals)
    code = squash_main(
        ["build", str(out / "route"), str(out / "store"), "--featurizer", "identity"]
    )
    if code != 0:
        return code

    kernel = random_kernel(5, 1, 8, seed=11)
    save_kernel(kernel, out / "theta.hqk")

    rng = np.random.default_rng(77)
    cases = []
    poses = [
        yaw_pose(10.0, 0.0, 1.6, 0.0),         # exactly at an anchor
        yaw_pose(12.5, 0.5, 1.6, 0.15),        # small offset + yaw
        yaw_pose(20.0, -1.0, 1.6, -0.3),       # next anchor, reversed yaw
        yaw_pose(33.0, 0.0, 1.6, 0.05),        # mid-route
        yaw_pose(18.0, 2.0, 1.4, 1.2),         # strong yaw, off-route
    ]
    for i, pose in enumerate(poses):
        n = int(rng.integers(800, 2500))
        pts = rng.uniform([-5, -20, -1.5], [30, 20, 3.0], size=(n, 3))
        # A couple of base channels so history lands after them.
        channels = rng.standard_normal((n, 2)).astype(np.float32)
        scan = PointCloud(pts, channels)
        scan_file = out / f"scan_{i}.hpc"
        pose_file = out / f"pose_{i}.csv"
        out_file = out / f"expected_{i}.hpc"
        save_hpc(scan, scan_file)
        save_poses_csv([(0, pose)], pose_file)
        code = squash_main(
            [
                "query",
                str(out / "store"),
                str(scan_file),
                str(pose_file),
                str(out / "theta.hqk"),
                str(out_file),
            ]
        )
        if code != 0:
            return code
        cases.append(
            {
                "scan": scan_file.name,
                "pose": pose_file.name,
                "expected": out_file.name,
                "base_channels": 2,
                "d_history": kernel.d_out,
            }
        )
    (out / "manifest.json").write_text(
        json.dumps({"store": "store", "kernel": "theta.hqk", "cases": cases}, indent=2)
        + "\n"
    )
    # The route is only an input to the build; the bridge consumes the store.
    shutil.rmtree(out / "route")
    print(f"wrote {len(cases)} fixtures to {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
