"""Command-line entry point.

Subcommands: convert | synth | train | infer | bench | render | gradcheck.
Configuration is key=value pairs from an optional --config file plus
trailing key=value overrides on the command line; unknown keys are
rejected before any work starts.  Exit codes: 0 success, 1 user/config/
data error, 2 internal numeric error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .bev import (
    BevConfig,
    load_pointcloud,
    pointcloud_to_bev,
    save_pointcloud,
    stack_sequence,
)
from .datagen import SceneSpec, gen_frame, gen_sequence
from .engine import (
    TrainConfig,
    Worker,
    run_parallel,
    run_sequential,
    train_future_segmentation,
    train_reconstruction,
)
from .errors import ConfigError, NumericError, PpnError
from .imageio import bev_to_gray, map_to_gray, write_pgm, write_ppm
from .losses import LossWeights
from .networks import (
    NetworkConfig,
    build_network,
    load_model,
    render_rgb,
    save_model,
    segment_sequence,
)
from .verify import run_gradient_suite

# key: (parser, default)
KNOWN_KEYS = {
    "resolution": (float, 0.4),
    "width": (int, 64),
    "height": (int, 64),
    "depth_size": (int, 16),
    "threshold": (float, 0.5),
    "t_in": (int, 16),
    "base": (int, 16),
    "depth": (int, 3),
    "out_channels": (int, 1),
    "activation": (str, "sigmoid"),
    "loss": (str, "mssce"),
    "lambda": (float, 0.85),
    "beta": (float, 1.0),
    "lr": (float, 1e-4),
    "iterations": (int, 700),
    "seed": (int, 0),
    "runs": (int, 20),
    "mode": (str, "both"),
    "regime": (str, "reconstruction"),
    "d": (int, 1),
    "f": (int, 1),
    "stride": (int, 4),
    "frames": (int, 16),
}


def _parse_pair(text):
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, _, value = text.partition("=")
    key = key.strip()
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown config key {key!r}; known: {', '.join(sorted(KNOWN_KEYS))}")
    caster, _ = KNOWN_KEYS[key]
    try:
        return key, (caster(value.strip()) if caster is not str else value.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def build_run_config(config_path, overrides):
    cfg = {k: default for k, (_, default) in KNOWN_KEYS.items()}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, value = _parse_pair(line)
            cfg[key] = value
    for text in overrides:
        key, value = _parse_pair(text)
        cfg[key] = value
    return cfg


def bev_config(cfg) -> BevConfig:
    return BevConfig(
        resolution=cfg["resolution"], width=cfg["width"], height=cfg["height"],
        depth_size=cfg["depth_size"], threshold=cfg["threshold"],
    )


def net_config(cfg, skips=True, out_channels=None, activation=None) -> NetworkConfig:
    return NetworkConfig(
        t_in=cfg["t_in"], base_channels=cfg["base"], depth=cfg["depth"],
        out_channels=cfg["out_channels"] if out_channels is None else out_channels,
        output_activation=cfg["activation"] if activation is None else activation,
        skips=skips,
    )


def scene_spec(cfg) -> SceneSpec:
    # track sized to the configured grid extent
    extent_x = cfg["resolution"] * cfg["width"] / 2
    extent_y = cfg["resolution"] * cfg["height"] / 2
    return SceneSpec(seed=cfg["seed"], track_length=extent_x * 0.9,
                     track_half_width=extent_y * 0.45)


def synthetic_maps(cfg, n_frames):
    spec = scene_spec(cfg)
    bc = bev_config(cfg)
    return [pointcloud_to_bev(c, bc) for c in gen_sequence(spec, 0, n_frames)]


def maps_from_dir(cfg, data_dir):
    bc = bev_config(cfg)
    files = sorted(Path(data_dir).glob("*.bin"))
    if not files:
        raise ConfigError(f"no .bin sweeps in {data_dir}")
    return [pointcloud_to_bev(load_pointcloud(f.read_bytes(), cfg["stride"]), bc)
            for f in files]


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_convert(args, cfg):
    bc = bev_config(cfg)
    inputs = [Path(p) for p in args.inputs]
    for p in inputs:  # validate everything before writing anything
        if not p.is_file():
            raise ConfigError(f"input not found: {p}")
    out = _out_dir(args)
    for p in inputs:
        try:
            cloud = load_pointcloud(p.read_bytes(), cfg["stride"])
        except PpnError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        bev = pointcloud_to_bev(cloud, bc)
        write_pgm(out / f"{p.stem}.pgm", bev_to_gray(bev.cells))
    print(f"converted {len(inputs)} sweep(s) -> {out}")
    return 0


def cmd_synth(args, cfg):
    spec = scene_spec(cfg)
    out = _out_dir(args)
    for t in range(cfg["frames"]):
        (out / f"frame_{t:05d}.bin").write_bytes(save_pointcloud(gen_frame(spec, t)))
    print(f"generated {cfg['frames']} synthetic sweep(s) -> {out}")
    return 0


def _write_log(path, log):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for entry in log:
            writer.writerow([entry.iteration, f"{entry.loss:.8g}", f"{entry.accuracy:.6f}"])


def cmd_train(args, cfg):
    regime = cfg["regime"]
    if regime not in ("reconstruction", "future"):
        raise ConfigError(f"regime must be reconstruction or future, got {regime!r}")
    if regime == "reconstruction":
        tc = TrainConfig(lr=cfg["lr"], lambda_weight=cfg["lambda"],
                         beta_smooth=cfg["beta"], iterations=cfg["iterations"],
                         loss_kind=cfg["loss"], seed=cfg["seed"])
    else:
        tc = TrainConfig(lr=cfg["lr"], lambda_weight=cfg["lambda"],
                         beta_smooth=cfg["beta"], iterations=cfg["iterations"],
                         loss_kind="mse_smoothl1", seed=cfg["seed"],
                         future_offset_d=cfg["d"], future_len_f=cfg["f"])
    t_in = cfg["t_in"]
    n_store = t_in + max(64, cfg["d"] + cfg["f"] + 8)
    maps = (maps_from_dir(cfg, args.data) if args.data
            else synthetic_maps(cfg, n_store))
    out = _out_dir(args)
    if regime == "reconstruction":
        if len(maps) < t_in:
            raise ConfigError(f"need at least {t_in} frames, got {len(maps)}")
        seg = Worker(0, build_network(net_config(cfg, skips=True),
                                      seed=cfg["seed"], dtype=np.float64), "segmentation")
        recon = Worker(1, build_network(net_config(cfg, skips=False),
                                        seed=cfg["seed"] + 1, dtype=np.float64),
                       "reconstruction")

        def windows():
            i = 0
            while True:
                t0 = i % (len(maps) - t_in + 1)
                yield stack_sequence(maps[t0:t0 + t_in])
                i += 1

        log = train_reconstruction(recon, seg, windows(), tc)
        save_model(recon.network, out / "model.ppn")
    else:
        net = build_network(net_config(cfg, skips=True, out_channels=cfg["f"]),
                            seed=cfg["seed"], dtype=np.float64)
        log = train_future_segmentation(net, maps, tc)
        save_model(net, out / "model.ppn")
    _write_log(out / "train_log.csv", log)
    print(f"trained {len(log)} iteration(s); final loss {log[-1].loss:.6g}, "
          f"accuracy {log[-1].accuracy:.4f}")
    return 0


def _build_pair(cfg):
    seg = Worker(0, build_network(net_config(cfg, skips=True), seed=cfg["seed"]),
                 "segmentation")
    recon = Worker(1, build_network(net_config(cfg, skips=False), seed=cfg["seed"] + 1),
                   "reconstruction")
    seg.network.set_mode("inference")
    recon.network.set_mode("inference")
    return seg, recon


def cmd_bench(args, cfg):
    mode = cfg["mode"]
    if mode not in ("sequential", "parallel", "both"):
        raise ConfigError(f"mode must be one of sequential, parallel, both; got {mode!r}")
    seg, recon = _build_pair(cfg)
    seq = stack_sequence(synthetic_maps(cfg, cfg["t_in"]))
    out = _out_dir(args)
    reports = []
    if mode in ("sequential", "both"):
        rep, _ = run_sequential(seg, recon, seq, cfg["runs"])
        reports.append(rep)
    if mode in ("parallel", "both"):
        rep, _ = run_parallel(seg, recon, seq, cfg["runs"])
        if mode == "both":
            rep.speedup_vs = reports[0].mean_s / rep.mean_s
        reports.append(rep)
    text = "\n".join(r.to_text() for r in reports)
    (out / "bench_report.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def _sequence_for_inference(args, cfg, t_in):
    if args.inputs:
        bc = bev_config(cfg)
        maps = []
        for p in map(Path, args.inputs):
            if not p.is_file():
                raise ConfigError(f"input not found: {p}")
            maps.append(pointcloud_to_bev(load_pointcloud(p.read_bytes(), cfg["stride"]), bc))
        if len(maps) != t_in:
            raise ConfigError(f"need exactly {t_in} input frames, got {len(maps)}")
        return stack_sequence(maps)
    return stack_sequence(synthetic_maps(cfg, t_in))


def _load_or_build(args, cfg, skips):
    if args.model:
        path = Path(args.model)
        if not path.is_file():
            raise ConfigError(f"model file not found: {path}")
        net = load_model(path)
        net.set_mode("inference")
        return net
    net = build_network(net_config(cfg, skips=skips), seed=cfg["seed"])
    net.set_mode("inference")
    return net


def cmd_infer(args, cfg):
    seg, recon = _build_pair(cfg)
    if args.model:
        recon.network = _load_or_build(args, cfg, skips=False)
    t_in = seg.network.config.t_in
    seq = _sequence_for_inference(args, cfg, t_in)
    out = _out_dir(args)
    seg_out = segment_sequence(seg.network, seq).data
    recon_out = segment_sequence(recon.network, seq).data
    write_pgm(out / "segmentation.pgm", map_to_gray(seg_out[0]))
    write_pgm(out / "reconstruction.pgm", map_to_gray(recon_out[0]))
    print(f"wrote segmentation.pgm and reconstruction.pgm -> {out}")
    return 0


def cmd_render(args, cfg):
    out = _out_dir(args)
    if args.rgb:
        net3 = (_load_or_build(args, cfg, skips=True) if args.model
                else build_network(
                    NetworkConfig(t_in=2, base_channels=cfg["base"], depth=cfg["depth"],
                                  out_channels=3, output_activation="tanh", skips=True),
                    seed=cfg["seed"]))
        net3.set_mode("inference")
        t_in = net3.config.t_in
        seq = _sequence_for_inference(args, cfg, t_in)
        image = render_rgb(net3, seq)
        write_ppm(out / "render_rgb.ppm", image)
        print(f"wrote render_rgb.ppm -> {out}")
        return 0
    return cmd_infer(args, cfg)


def cmd_gradcheck(args, cfg):
    results = run_gradient_suite(seed=cfg["seed"], corrupt=args.corrupt)
    failures = []
    for name, (error, threshold) in sorted(results.items()):
        limit = args.threshold if args.threshold is not None else threshold
        status = "pass" if error <= limit else "FAIL"
        print(f"{name}: max_rel_error={error:.3e} threshold={limit:.1e} {status}")
        if error > limit:
            failures.append(name)
    if failures:
        print(f"gradient check failed for: {', '.join(failures)}")
        return 1
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="ppn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inputs=False, model=False):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="override the seed key")
        p.add_argument("--out", default="out", help="output directory")
        if model:
            p.add_argument("--model", help="serialized model file (PPN1)")
        if inputs:
            p.add_argument("--in", dest="inputs", nargs="*", default=[],
                           help="input sweep files")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides (take precedence over --config)")

    common(sub.add_parser("convert", help="sweep files -> BEV graymaps"), inputs=True)
    common(sub.add_parser("synth", help="generate synthetic sweeps"))
    p = sub.add_parser("train", help="train a network on synthetic or stored sweeps")
    common(p)
    p.add_argument("--data", help="directory of .bin sweeps (default: synthetic)")
    common(sub.add_parser("infer", help="run both networks on one sequence"),
           inputs=True, model=True)
    common(sub.add_parser("bench", help="sequential/parallel latency benchmark"))
    p = sub.add_parser("render", help="write network outputs as images")
    common(p, inputs=True, model=True)
    p.add_argument("--rgb", action="store_true", help="2-frame 3-channel tanh variant")
    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--threshold", type=float, help="override all per-kernel thresholds")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # test hook
    return parser


COMMANDS = {
    "convert": cmd_convert,
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "bench": cmd_bench,
    "render": cmd_render,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        cfg = build_run_config(args.config, args.overrides)
        if args.seed is not None:
            cfg["seed"] = args.seed
        # touch every derived config up front so bad values fail before side effects
        bev_config(cfg)
        return COMMANDS[args.command](args, cfg)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except (PpnError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
