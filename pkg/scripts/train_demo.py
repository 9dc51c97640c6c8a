#!/usr/bin/env python3
"""Self-supervised reconstruction training demo on synthetic scenes.

Pre-trains the segmentation network on current-frame targets so its
output carries real structure, then trains the reconstruction network
against the frozen segmentation output and prints the loss trajectory.
"""

import argparse

import numpy as np

from ppn.bev import BevConfig, pointcloud_to_bev, stack_sequence
from ppn.datagen import SceneSpec, gen_sequence
from ppn.engine import (
    TrainConfig,
    Worker,
    train_future_segmentation,
    train_reconstruction,
)
from ppn.networks import NetworkConfig, build_network


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--pretrain-iterations", type=int, default=150)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--loss", choices=["mssce", "iou"], default="mssce")
    p.add_argument("--base", type=int, default=8)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args()


def main():
    args = parse_args()
    bev = BevConfig(resolution=0.4, width=64, height=64, depth_size=16)
    scene = SceneSpec(seed=args.seed, track_length=11.0, track_half_width=5.0)
    maps = [pointcloud_to_bev(c, bev) for c in gen_sequence(scene, 0, 40)]

    seg_cfg = NetworkConfig(t_in=16, base_channels=args.base, depth=args.depth)
    seg_net = build_network(seg_cfg, seed=args.seed + 1, dtype=np.float64)
    pre = TrainConfig(lr=1e-3, iterations=args.pretrain_iterations,
                      loss_kind="mse_smoothl1", seed=args.seed,
                      future_offset_d=0, future_len_f=1)
    pre_log = train_future_segmentation(seg_net, maps, pre)
    print(f"segmentation pretraining: loss {pre_log[0].loss:.4f} -> "
          f"{pre_log[-1].loss:.4f}")

    recon_cfg = NetworkConfig(t_in=16, base_channels=args.base,
                              depth=args.depth, skips=False)
    seg = Worker(0, seg_net, "segmentation")
    recon = Worker(1, build_network(recon_cfg, seed=args.seed + 2,
                                    dtype=np.float64), "reconstruction")

    def windows():
        i = 0
        while True:
            t0 = i % (len(maps) - 15)
            yield stack_sequence(maps[t0:t0 + 16])
            i += 1

    cfg = TrainConfig(lr=args.lr, iterations=args.iterations,
                      loss_kind=args.loss, seed=args.seed)
    log = train_reconstruction(recon, seg, windows(), cfg)
    for entry in log[:: max(1, len(log) // 15)]:
        print(f"iter {entry.iteration:4d}  loss {entry.loss:.5f}  "
              f"accuracy {entry.accuracy:.4f}")
    losses = [e.loss for e in log]
    w = min(20, len(losses))
    print(f"smoothed loss (window {w}): initial {np.mean(losses[:w]):.5f}, "
          f"final {np.mean(losses[-w:]):.5f}")


if __name__ == "__main__":
    main()
