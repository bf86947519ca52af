"""Dataset preprocessing, augmentation, two-stage training, and metrics.

Stage 1 pretrains the network on input-channel reconstruction; stage 2
fine-tunes on the golden IR-drop map with MSE loss. Metrics follow the
contest definitions: hotspot F1 at 90% of the true maximum, MAE in volts,
and TAT as wall-clock inference seconds.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import IrDropModel
from .pointcloud import PointCloud, cap_pointcloud, encode_pointcloud
from .rasterize import (CHANNELS, FeatureStack, GridSpec, build_feature_stack,
                        load_channel_csv)
from .solver import solve_static
from .spice import parse_netlist


class TrainingError(Exception):
    pass


class DivergedLoss(TrainingError):
    pass


# ------------------------------------------------------------ preprocessing

@dataclass(frozen=True)
class PadScaleRecord:
    mode: str  # "pad" | "scale" | "identity"
    orig_h: int
    orig_w: int
    side: int


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray  # (C,)
    std: np.ndarray  # (C,), floored at 1e-8
    # training fits target * target_scale so the regression head sees O(1)
    # magnitudes; predictions are divided by it to recover volts
    target_scale: float = 1.0

    @staticmethod
    def from_stacks(stacks: list[np.ndarray], side: int) -> "ChannelStats":
        resized = [resize_stack(s, side)[0] for s in stacks]
        data = np.stack(resized)  # (N, C, S, S)
        mean = data.mean(axis=(0, 2, 3))
        std = np.maximum(data.std(axis=(0, 2, 3)), 1e-8)
        return ChannelStats(mean=mean, std=std)


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resample of a 2D array."""
    h, w = grid.shape
    if (h, w) == (out_h, out_w):
        return grid.copy()
    ys = np.linspace(0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def resize_stack(stack: np.ndarray, side: int) -> tuple[np.ndarray, PadScaleRecord]:
    """Pad (small) or bilinearly scale (large) a (C,H,W) stack to side x side."""
    c, h, w = stack.shape
    if h == side and w == side:
        return stack.copy(), PadScaleRecord("identity", h, w, side)
    if h <= side and w <= side:
        out = np.zeros((c, side, side), dtype=stack.dtype)
        out[:, :h, :w] = stack  # content stays at the top-left corner
        return out, PadScaleRecord("pad", h, w, side)
    out = np.stack([bilinear_resize(ch, side, side) for ch in stack])
    return out, PadScaleRecord("scale", h, w, side)


def preprocess(stack: FeatureStack, stats: ChannelStats,
               side: int = 512) -> tuple[np.ndarray, np.ndarray, PadScaleRecord]:
    """FeatureStack -> (normalized input (C,S,S), resized target, record)."""
    arr, record = resize_stack(stack.as_array(), side)
    arr = (arr - stats.mean[:, None, None]) / stats.std[:, None, None]
    target, _ = resize_stack(stack.target[None], side)
    return arr.astype(np.float32), target[0].astype(np.float32), record


def postprocess(pred: np.ndarray, record: PadScaleRecord) -> np.ndarray:
    """Invert resize_stack on a (S,S) prediction."""
    if record.mode == "identity":
        return pred.copy()
    if record.mode == "pad":
        return pred[:record.orig_h, :record.orig_w].copy()
    return bilinear_resize(pred, record.orig_h, record.orig_w)


def augment(arr: np.ndarray, seed: int, sigma_max: float = 1e-3) -> np.ndarray:
    """Gaussian-noise augmentation: sigma ~ U(0, sigma_max), one draw per call."""
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(0.0, sigma_max)
    if sigma == 0.0:
        return arr.copy()
    return arr + rng.normal(0.0, sigma, size=arr.shape).astype(arr.dtype)


# ------------------------------------------------------------------ metrics

def f1_score(pred: np.ndarray, truth: np.ndarray) -> float:
    """Hotspot F1: positives are cells strictly above 0.9 * max(truth).

    The truth-derived threshold binarizes both maps; degenerate cases
    (all-zero truth or no true positives) score 0.
    """
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    t = 0.9 * truth.max()
    if truth.max() <= 0.0:
        return 0.0
    truth_pos = truth > t
    pred_pos = pred > t
    tp = int(np.sum(truth_pos & pred_pos))
    fp = int(np.sum(~truth_pos & pred_pos))
    fn = int(np.sum(truth_pos & ~pred_pos))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


# ------------------------------------------------------------------ dataset

@dataclass
class Sample:
    case_id: str
    stack: FeatureStack
    cloud: PointCloud
    tag: str = "fake"  # fake | real
    oversample: int = 0  # 0 = use the tag default


def load_manifest(path) -> list[dict]:
    rows = []
    with open(path) as f:
        for row in csv.DictReader(f):
            rows.append(row)
    return rows


def load_sample(row: dict, base_dir: Path) -> Sample:
    netlist_path = base_dir / row["netlist_path"]
    nl = parse_netlist(netlist_path.read_text())
    spec = GridSpec.from_netlist(nl)
    if row.get("target_path"):
        target = load_channel_csv(base_dir / row["target_path"])
        sol = None
    else:
        sol = solve_static(nl)
        target = None
    if sol is not None:
        stack = build_feature_stack(nl, sol, spec)
    else:
        from .rasterize import (current_map, effective_distance_map,
                                pdn_density_map, resistance_map, source_plots)
        v_src, i_src = source_plots(nl, spec)
        stack = FeatureStack(
            channels={
                "current": current_map(nl, spec),
                "eff_dist": effective_distance_map(nl, spec),
                "pdn_density": pdn_density_map(nl, spec),
                "v_source": v_src,
                "i_source": i_src,
                "resistance": resistance_map(nl, spec),
            },
            target=target, spec=spec)
    return Sample(case_id=row["case_id"], stack=stack,
                  cloud=encode_pointcloud(nl), tag=row.get("tag", "fake"),
                  oversample=int(row.get("oversample") or 0))


def load_dataset(manifest_path) -> list[Sample]:
    base = Path(manifest_path).parent
    return [load_sample(row, base) for row in load_manifest(manifest_path)]


# ----------------------------------------------------------------- training

@dataclass
class TrainConfig:
    batch_size: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    stage1_steps: int = 50
    stage2_steps: int = 200
    seed: int = 0
    sigma_max: float = 1e-3
    disable_augmentation: bool = False
    oversample_fake: int = 10
    oversample_real: int = 20
    max_points: int = 2048


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / bias1) / (
                np.sqrt(self.v[k] / bias2) + self.eps)


@dataclass
class TrainResult:
    stage1_losses: list[float] = field(default_factory=list)
    stage2_losses: list[float] = field(default_factory=list)
    stats: ChannelStats | None = None


def _oversampled_indices(samples: list[Sample], cfg: TrainConfig) -> list[int]:
    out = []
    for i, s in enumerate(samples):
        reps = s.oversample or (cfg.oversample_real if s.tag == "real"
                                else cfg.oversample_fake)
        out.extend([i] * max(1, reps))
    return out


def train(samples: list[Sample], model: IrDropModel,
          cfg: TrainConfig) -> TrainResult:
    """Two-stage training. Deterministic for a fixed (seed, dataset, config)."""
    if not samples:
        raise TrainingError("training needs at least one sample")
    side = model.config.out_side
    stats = ChannelStats.from_stacks([s.stack.as_array() for s in samples], side)
    t_max = max(float(s.stack.target.max()) for s in samples)
    stats = dataclasses.replace(stats,
                                target_scale=1.0 / t_max if t_max > 0 else 1.0)

    prepped = []
    for s in samples:
        inp, target, _ = preprocess(s.stack, stats, side)
        cloud = cap_pointcloud(s.cloud, cfg.max_points, seed=cfg.seed)
        prepped.append((inp, target * np.float32(stats.target_scale), cloud))

    rng = np.random.default_rng(cfg.seed)
    pool = _oversampled_indices(samples, cfg)
    result = TrainResult(stats=stats)

    def run_stage(n_steps: int, reconstruction: bool, losses: list[float]):
        if n_steps <= 0:
            return
        opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        order: list[int] = []
        for step in range(n_steps):
            if len(order) < cfg.batch_size:
                order += list(rng.permutation(pool))
            batch, order[:] = order[:cfg.batch_size], order[cfg.batch_size:]
            model.zero_grads()
            step_loss = 0.0
            for j, idx in enumerate(batch):
                inp, target, cloud = prepped[idx]
                if not cfg.disable_augmentation:
                    noise_seed = int(rng.integers(2 ** 31))
                    x = augment(inp, noise_seed, cfg.sigma_max)
                else:
                    x = inp
                if reconstruction:
                    pred = model.reconstruct(x, cloud)
                    loss = ad.mse_loss(pred, Tensor(inp[None]))
                else:
                    pred = model.forward(x, cloud)
                    loss = ad.mse_loss(pred, Tensor(target[None, None]))
                step_loss += float(loss.data)
                ad.scale(loss, 1.0 / len(batch)).backward()
            step_loss /= len(batch)
            if not np.isfinite(step_loss):
                raise DivergedLoss(f"nan/inf loss at step {step}")
            losses.append(step_loss)
            opt.step()

    run_stage(cfg.stage1_steps, True, result.stage1_losses)
    run_stage(cfg.stage2_steps, False, result.stage2_losses)
    return result


# --------------------------------------------------------------- evaluation

@dataclass
class CaseResult:
    case_id: str
    f1: float
    mae: float  # volts
    tat: float  # seconds


@dataclass
class EvalReport:
    cases: list[CaseResult]

    @property
    def avg_f1(self) -> float:
        return float(np.mean([c.f1 for c in self.cases]))

    @property
    def avg_mae(self) -> float:
        return float(np.mean([c.mae for c in self.cases]))

    @property
    def avg_tat(self) -> float:
        return float(np.mean([c.tat for c in self.cases]))


def predict_case(model: IrDropModel, sample: Sample, stats: ChannelStats,
                 max_points: int = 2048, seed: int = 0) -> tuple[np.ndarray, float]:
    """Run one case end to end; returns (native-resolution map, TAT seconds)."""
    t0 = time.perf_counter()
    inp, _, record = preprocess(sample.stack, stats, model.config.out_side)
    cloud = cap_pointcloud(sample.cloud, max_points, seed=seed)
    pred = model.forward(inp, cloud)
    volts = pred.data[0, 0].astype(np.float64) / stats.target_scale
    out = postprocess(volts, record)
    return out, time.perf_counter() - t0


def evaluate(model: IrDropModel, samples: list[Sample], stats: ChannelStats,
             max_points: int = 2048, seed: int = 0) -> EvalReport:
    cases = []
    for s in samples:
        pred, tat = predict_case(model, s, stats, max_points, seed)
        cases.append(CaseResult(case_id=s.case_id,
                                f1=f1_score(pred, s.stack.target),
                                mae=mae(pred, s.stack.target), tat=tat))
    return EvalReport(cases=cases)


def report_csv(report: EvalReport, include_tat: bool = True,
               label: str | None = None) -> str:
    """Contest-style table: F1, MAE in 1e-4 V, TAT in seconds."""
    cols = "case_id,f1,mae_1e-4V" + (",tat_s" if include_tat else "")
    if label:
        cols += ",config"
    lines = [cols]
    rows = report.cases + [CaseResult("avg", report.avg_f1, report.avg_mae,
                                      report.avg_tat)]
    for c in rows:
        line = f"{c.case_id},{c.f1:.4f},{c.mae * 1e4:.4f}"
        if include_tat:
            line += f",{c.tat:.3f}"
        if label:
            line += f",{label}"
        lines.append(line)
    return "\n".join(lines) + "\n"
