"""Sequential vs. parallel orchestration of the two networks, latency
benchmarking, and the two training regimes.

Parallelism is two long-lived worker threads, each exclusively owning
one network.  Workers communicate only through immutable input
snapshots and a completion barrier; a cycle ends when both outputs
exist.  The heavy kernels release the GIL inside BLAS, so two threads
genuinely overlap on multi-core machines.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .bev import BevSequence, sequence_to_array
from .errors import ConfigError, DataError, NumericError, PpnError
from .losses import (
    CannyParams,
    LossWeights,
    iou_loss,
    mse,
    mssce,
    pixel_accuracy,
    smooth_l1,
)
from .networks import Network, forward
from .tensor import AdamState, Tensor, adam_step, no_grad

WARMUP_RUNS = 3


@dataclass
class Worker:
    id: int
    network: Network
    role: str  # "segmentation" | "reconstruction"


@dataclass
class CycleResult:
    seg_output: np.ndarray
    recon_output: np.ndarray
    cycle_latency: float
    per_worker_latency: tuple


@dataclass
class BenchReport:
    mode: str
    runs: int
    min_s: float
    max_s: float
    mean_s: float
    speedup_vs: float | None = None
    threads: int | None = None

    def to_text(self) -> str:
        lines = [
            f"mode={self.mode}",
            f"runs={self.runs}",
            f"min_s={self.min_s:.6f}",
            f"max_s={self.max_s:.6f}",
            f"mean_s={self.mean_s:.6f}",
        ]
        if self.speedup_vs is not None:
            lines.append(f"speedup_vs={self.speedup_vs:.4f}")
        if self.threads is not None:
            lines.append(f"threads={self.threads}")
        return "\n".join(lines) + "\n"


def _report(mode, times):
    times = times[WARMUP_RUNS:] if len(times) > WARMUP_RUNS else times[-1:]
    return BenchReport(
        mode=mode,
        runs=len(times),
        min_s=min(times),
        max_s=max(times),
        mean_s=sum(times) / len(times),
        threads=int(os.environ["PPN_THREADS"]) if os.environ.get("PPN_THREADS") else None,
    ), times


def run_cycle_sequential(seg: Worker, recon: Worker, x: Tensor) -> CycleResult:
    start = time.perf_counter()
    with no_grad():
        t0 = time.perf_counter()
        seg_out = forward(seg.network, x)
        t1 = time.perf_counter()
        recon_out = forward(recon.network, x)
        t2 = time.perf_counter()
    return CycleResult(
        seg_output=seg_out.data,
        recon_output=recon_out.data,
        cycle_latency=t2 - start,
        per_worker_latency=(t1 - t0, t2 - t1),
    )


def run_sequential(seg: Worker, recon: Worker, seq: BevSequence, runs: int) -> tuple:
    """Benchmark seg-then-recon on one thread; returns (report, last CycleResult)."""
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    base = sequence_to_array(seq, dtype=seg.network.dtype)
    times, last = [], None
    # one BLAS thread per op: the parallelism under test is network-level
    with threadpool_limits(limits=1):
        for _ in range(WARMUP_RUNS + runs):
            x = Tensor(base.copy())  # per-run materialization, mirrors parallel mode
            last = run_cycle_sequential(seg, recon, x)
            times.append(last.cycle_latency)
    report, _ = _report("sequential", times)
    return report, last


class _WorkerThread(threading.Thread):
    """Long-lived execution context owning one network for a whole benchmark."""

    def __init__(self, worker: Worker, seq: BevSequence, start_barrier, done_barrier):
        super().__init__(daemon=True)
        self.worker = worker
        self.seq = seq
        self.start_barrier = start_barrier
        self.done_barrier = done_barrier
        self.output = None
        self.latency = None
        self.error = None
        self.stop = False

    def run(self):
        try:
            while True:
                self.start_barrier.wait()
                if self.stop:
                    return
                t0 = time.perf_counter()
                # per-device input conversion: each worker materializes its own copy
                x = Tensor(sequence_to_array(self.seq, dtype=self.worker.network.dtype))
                with no_grad():
                    out = forward(self.worker.network, x)
                self.latency = time.perf_counter() - t0
                self.output = out.data
                self.done_barrier.wait()
        except Exception as exc:  # propagated to the orchestrator
            self.error = exc
            try:
                self.done_barrier.abort()
            except Exception:
                pass


def run_parallel(seg: Worker, recon: Worker, seq: BevSequence, runs: int) -> tuple:
    """Benchmark both networks concurrently; returns (report, last CycleResult)."""
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    start_barrier = threading.Barrier(3)
    done_barrier = threading.Barrier(3)
    threads = [
        _WorkerThread(seg, seq, start_barrier, done_barrier),
        _WorkerThread(recon, seq, start_barrier, done_barrier),
    ]
    for t in threads:
        t.start()
    times, last = [], None
    try:
        with threadpool_limits(limits=1):
            for _ in range(WARMUP_RUNS + runs):
                t0 = time.perf_counter()
                start_barrier.wait()  # dispatch
                try:
                    done_barrier.wait()  # cycle ends when both outputs exist
                except threading.BrokenBarrierError:
                    for t in threads:
                        if t.error is not None:
                            raise PpnError(
                                f"worker {t.worker.id} failed: {t.error}") from t.error
                    raise
                cycle = time.perf_counter() - t0
                times.append(cycle)
                last = CycleResult(
                    seg_output=threads[0].output,
                    recon_output=threads[1].output,
                    cycle_latency=cycle,
                    per_worker_latency=(threads[0].latency, threads[1].latency),
                )
    finally:
        for t in threads:
            t.stop = True
        try:
            start_barrier.wait(timeout=1.0)
        except Exception:
            pass
    report, _ = _report("parallel", times)
    return report, last


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lambda_weight: float = 0.85
    beta_smooth: float = 1.0
    iterations: int = 700
    loss_kind: str = "mssce"  # mssce | iou | mse_smoothl1
    seed: int = 0
    future_offset_d: int = 1
    future_len_f: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.loss_kind not in ("mssce", "iou", "mse_smoothl1"):
            raise ConfigError(f"unknown loss_kind {self.loss_kind!r}")
        if self.future_offset_d < 0 or self.future_len_f < 1:
            raise ConfigError("need future_offset_d >= 0 and future_len_f >= 1")


@dataclass
class TrainLogEntry:
    iteration: int
    loss: float
    accuracy: float


def weights_hash(net: Network) -> str:
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(p.data.tobytes())
    return h.hexdigest()


def _check_finite(loss_value, iteration):
    if not np.isfinite(loss_value):
        raise NumericError(f"non-finite loss at iteration {iteration}")


def train_reconstruction(recon: Worker, seg: Worker, data, cfg: TrainConfig) -> list:
    """Self-supervised training: the frozen segmentation network's output is
    the target for the reconstruction network.  `data` yields BevSequences."""
    if cfg.loss_kind not in ("mssce", "iou"):
        raise ConfigError(f"reconstruction training needs mssce or iou, got {cfg.loss_kind}")
    weights = LossWeights(lambda_weight=cfg.lambda_weight, beta_smooth=cfg.beta_smooth)
    canny_params = CannyParams()
    seg.network.set_mode("inference")  # frozen
    recon.network.set_mode("training")
    params = recon.network.parameters()
    opt = AdamState.create(params, lr=cfg.lr)
    log = []
    it = iter(data)
    for i in range(cfg.iterations):
        seq = next(it)
        x = Tensor(sequence_to_array(seq, dtype=recon.network.dtype))
        with no_grad():
            target = forward(seg.network, x).data
        pred = forward(recon.network, x)
        if not np.all(np.isfinite(pred.data)):
            raise NumericError(f"non-finite network output at iteration {i}")
        if cfg.loss_kind == "mssce":
            loss = mssce(pred, target, weights, canny_params)
        else:
            loss = iou_loss(pred, (target > 0.5).astype(target.dtype))
        _check_finite(loss.item(), i)
        recon.network.zero_grad()
        loss.backward()
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        adam_step(params, grads, opt)
        log.append(TrainLogEntry(i, loss.item(), pixel_accuracy(pred.data, target)))
    return log


def train_future_segmentation(net: Network, store: list, cfg: TrainConfig) -> list:
    """Benchmark regime: input frames (t-T+1 .. t), target frames
    (t+d .. t+d+F-1) stacked on the channel axis; loss = MSE + SmoothL1."""
    if cfg.loss_kind != "mse_smoothl1":
        raise ConfigError(f"future training needs mse_smoothl1, got {cfg.loss_kind}")
    t_in = net.config.t_in
    f_len = cfg.future_len_f
    if net.config.out_channels != f_len:
        raise ConfigError(
            f"network out_channels {net.config.out_channels} != future_len_f {f_len}")
    min_len = t_in + cfg.future_offset_d + f_len
    if len(store) < min_len:
        raise DataError(f"store length {len(store)} < required {min_len}")
    net.set_mode("training")
    params = net.parameters()
    opt = AdamState.create(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    t_min, t_max = t_in - 1, len(store) - cfg.future_offset_d - f_len
    log = []
    for i in range(cfg.iterations):
        t = int(rng.integers(t_min, t_max))
        window = sample_window(store, t, t_in, cfg.future_offset_d, f_len, net.dtype)
        x, target = window
        pred = forward(net, Tensor(x))
        loss = mse(pred, target) + smooth_l1(pred, target, cfg.beta_smooth)
        _check_finite(loss.item(), i)
        net.zero_grad()
        loss.backward()
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        adam_step(params, grads, opt)
        log.append(TrainLogEntry(i, loss.item(), pixel_accuracy(pred.data, target)))
    return log


def sample_window(store, t, t_in, d, f_len, dtype):
    """Input/target arrays for current frame index t; raises on out-of-range t."""
    lo, hi = t - t_in + 1, t + d + f_len
    if lo < 0 or hi > len(store):
        raise DataError(f"window for t={t} spans [{lo}, {hi}) outside store "
                        f"of length {len(store)}")
    x = np.stack([store[k].cells for k in range(lo, t + 1)]).astype(dtype)
    target = np.stack(
        [store[k].cells for k in range(t + d, t + d + f_len)]).astype(dtype)
    return x, target
