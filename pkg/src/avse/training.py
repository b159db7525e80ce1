"""Mini-batch MSE training with Adam, utterance-level zero padding,
validation-based model selection, and the finite-difference gradient-check
harness.

Batches are built at utterance level: every utterance contributes its chunk
sequence, shorter sequences are padded with zero chunks, and a validity
mask (chunk-level times within-chunk column validity) confines the loss to
real data. Runs are bit-reproducible for identical (seed, config, data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import audio
from .errors import ConfigError, DataError, NumericError
from .model import AudioVisualEnhancer, fit_feature_stats
from .tensor import Tensor


@dataclass
class TrainConfig:
    learning_rate: float = 0.0002
    batch_size: int = 4          # desk-scale default; the full recipe uses 16
    max_epochs: int = 10
    seed: int = 0
    snr_range_db: tuple = (-10.0, 10.0)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = None   # 5.0 helps LSTM stability; off by default
    max_steps: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        lo, hi = self.snr_range_db
        if hi < lo:
            raise ConfigError("snr range is empty")


def group_by_utterance(examples) -> list:
    """Stable grouping of AVExamples into per-utterance chunk sequences."""
    order = []
    groups = {}
    for ex in examples:
        if ex.utterance_id not in groups:
            groups[ex.utterance_id] = []
            order.append(ex.utterance_id)
        groups[ex.utterance_id].append(ex)
    for utt in order:
        groups[utt].sort(key=lambda e: e.chunk_index)
    return [groups[u] for u in order]


@dataclass
class Batch:
    mixture: np.ndarray        # (U, Tmax, 1, 80, 20)
    clean: np.ndarray          # (U, Tmax, 1, 80, 20)
    video: np.ndarray          # (U, Tmax, 5, 80, 80)
    mask: np.ndarray           # (U, Tmax, 1, 80, 20); zero on padding
    chunk_valid: np.ndarray    # (U, Tmax) bool

    def flat(self):
        u, t = self.mixture.shape[:2]
        return (self.mixture.reshape(u * t, 1, audio.N_MELS, audio.CHUNK_FRAMES),
                self.clean.reshape(u * t, 1, audio.N_MELS, audio.CHUNK_FRAMES),
                self.video.reshape(u * t, 5, 80, 80),
                self.mask.reshape(u * t, 1, audio.N_MELS, audio.CHUNK_FRAMES))


def make_batch(utterances) -> Batch:
    """Pad variable-length chunk sequences with zero chunks plus a mask."""
    if not utterances:
        raise DataError("empty batch")
    u = len(utterances)
    tmax = max(len(seq) for seq in utterances)
    mix = np.zeros((u, tmax, 1, audio.N_MELS, audio.CHUNK_FRAMES))
    clean = np.zeros_like(mix)
    vid = np.zeros((u, tmax, 5, 80, 80))
    mask = np.zeros_like(mix)
    valid = np.zeros((u, tmax), dtype=bool)
    for i, seq in enumerate(utterances):
        for j, ex in enumerate(seq):
            mix[i, j, 0] = ex.mixture_chunk.matrix
            clean[i, j, 0] = ex.clean_chunk.matrix
            vid[i, j] = ex.video
            mask[i, j, 0, :, :ex.clean_chunk.valid_frames] = 1.0
            valid[i, j] = True
    return Batch(mix, clean, vid, mask, valid)


def mse_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over valid elements only."""
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise DataError(
            f"loss shapes disagree: {pred.shape}, {target.shape}, {mask.shape}")
    count = float(mask.sum())
    if count == 0:
        raise DataError("mask excludes every element")
    diff = pred - Tensor(target)
    return (diff * diff * Tensor(mask)).sum() * (1.0 / count)


class Adam:
    """Standard Adam with bias correction; state is per-parameter (m, v)."""

    def __init__(self, named_params, config: TrainConfig):
        self.params = list(named_params)
        self.lr = config.learning_rate
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.grad_clip = config.grad_clip
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self):
        grads = {}
        for name, p in self.params:
            grads[name] = np.zeros_like(p.data) if p.grad is None else p.grad
        if self.grad_clip is not None:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.grad_clip:
                scale = self.grad_clip / total
                grads = {n: g * scale for n, g in grads.items()}
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self):
        return ({n: m.copy() for n, m in self.m.items()},
                {n: v.copy() for n, v in self.v.items()},
                self.step_count)

    def load(self, m, v, step_count):
        for name, _ in self.params:
            if name in m:
                self.m[name] = m[name].copy()
            if name in v:
                self.v[name] = v[name].copy()
        self.step_count = step_count


@dataclass
class HistoryRow:
    epoch: int
    step: int
    train_loss: float
    val_loss: float | None = None


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_loss: float
    best_params: dict
    best_buffers: dict
    best_adam: tuple
    final_val_loss: float

    def history_csv(self) -> str:
        lines = ["epoch,step,train_loss,val_loss"]
        for row in self.history:
            val = "" if row.val_loss is None else repr(row.val_loss)
            lines.append(f"{row.epoch},{row.step},{repr(row.train_loss)},{val}")
        return "\n".join(lines) + "\n"


def _diagnostics(model, epoch, step):
    norms = {name: float(np.linalg.norm(p.data))
             for name, p in model.named_parameters()}
    worst = sorted(norms.items(), key=lambda kv: -kv[1])[:5]
    return (f"epoch {epoch}, step {step}, largest parameter norms: "
            + ", ".join(f"{n}={v:.3g}" for n, v in worst))


def evaluate_loss(model: AudioVisualEnhancer, utterances) -> float:
    """Masked MSE over a dataset, eval-mode forward."""
    total, count = 0.0, 0.0
    for i in range(0, len(utterances), 8):
        batch = make_batch(utterances[i:i + 8])
        mix, clean, vid, mask = batch.flat()
        pred = model.forward(Tensor(mix), Tensor(vid), training=False)
        total += float((((pred.data - clean) ** 2) * mask).sum())
        count += float(mask.sum())
    return total / count


def train(model: AudioVisualEnhancer, train_utts, val_utts,
          config: TrainConfig, optimizer_state=None) -> TrainResult:
    """Seeded-shuffle epochs of forward/MSE/backward/Adam; retains the
    checkpoint state with the lowest validation loss. optimizer_state
    (m, v, step) resumes a previous run's Adam moments."""
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(list(model.named_parameters()), config)
    if optimizer_state is not None:
        optimizer.load(*optimizer_state)
    history = []
    best = None
    step = 0
    stop = False
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_utts))
        for lo in range(0, len(order), config.batch_size):
            batch_utts = [train_utts[i] for i in order[lo:lo + config.batch_size]]
            batch = make_batch(batch_utts)
            mix, clean, vid, mask = batch.flat()
            model.zero_grad()
            try:
                pred = model.forward(Tensor(mix), Tensor(vid), training=True)
                loss = mse_loss(pred, clean, mask)
                loss_val = loss.item()
                loss.backward()
            except NumericError as err:
                raise NumericError(
                    f"non-finite loss: {err} ({_diagnostics(model, epoch, step)})"
                ) from err
            optimizer.step()
            step += 1
            history.append(HistoryRow(epoch, step, loss_val))
            if config.max_steps is not None and step >= config.max_steps:
                stop = True
                break
        val = evaluate_loss(model, val_utts)
        history[-1].val_loss = val
        if best is None or val < best[0]:
            params, buffers = model.state_arrays()
            best = (val, epoch, params, buffers, optimizer.state())
        if stop:
            break
    if best is None:
        raise DataError("no training epochs ran")
    return TrainResult(history=history, best_epoch=best[1], best_val_loss=best[0],
                       best_params=best[2], best_buffers=best[3],
                       best_adam=best[4], final_val_loss=history[-1].val_loss)


def final_train_loss(model: AudioVisualEnhancer, train_utts) -> float:
    """Training-mode masked MSE of the current parameters (stats frozen)."""
    batch = make_batch(train_utts)
    mix, clean, vid, mask = batch.flat()
    pred = model.forward(Tensor(mix), Tensor(vid), training=True,
                         update_stats=False)
    return mse_loss(pred, clean, mask).item()


def prepared_model(config, examples, seed: int = 0) -> AudioVisualEnhancer:
    """Build a model whose feature normalization is fit to the dataset."""
    from dataclasses import replace
    mean, std = fit_feature_stats(examples)
    cfg = replace(config, feature_mean=mean, feature_std=std)
    from .model import build_model
    return build_model(cfg, seed=seed)


# -- gradient check ---------------------------------------------------------------


def jitter_parameters(model: AudioVisualEnhancer, scale: float = 0.05,
                      seed: int = 0):
    """Add small seeded noise to every parameter. Gradient checks should
    run at a generic point: zero-initialized tensors (the regression head,
    the attention scale weights) otherwise leave whole adjoint paths with
    identically zero gradients that a finite-difference probe cannot see."""
    rng = np.random.default_rng(seed)
    for _, p in model.named_parameters():
        p.data = p.data + scale * rng.standard_normal(p.data.shape)


@dataclass
class GradCheckReport:
    per_tensor: dict = field(default_factory=dict)   # name -> (max_rel, n)

    @property
    def max_rel_err(self) -> float:
        return max((v[0] for v in self.per_tensor.values()), default=0.0)

    @property
    def worst_tensor(self) -> str:
        if not self.per_tensor:
            return ""
        return max(self.per_tensor, key=lambda n: self.per_tensor[n][0])

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_err < tolerance

    def summary(self) -> str:
        lines = [f"{name}: max_rel={v[0]:.3e} over {v[1]} probes"
                 for name, v in sorted(self.per_tensor.items())]
        lines.append(f"worst: {self.worst_tensor} ({self.max_rel_err:.3e})")
        return "\n".join(lines)


def grad_check(model: AudioVisualEnhancer, utterances, step: float = 1e-4,
               samples_per_tensor: int = 20, seed: int = 0) -> GradCheckReport:
    """Central finite differences on a deterministic subsample of at least
    samples_per_tensor scalars per learnable tensor. Batch-norm runs in
    train mode with running-stat updates disabled so every probe sees the
    same function."""
    batch = make_batch(utterances)
    mix, clean, vid, mask = batch.flat()

    def loss_value() -> float:
        pred = model.forward(Tensor(mix), Tensor(vid), training=True,
                             update_stats=False)
        return mse_loss(pred, clean, mask).item()

    model.zero_grad()
    pred = model.forward(Tensor(mix), Tensor(vid), training=True,
                         update_stats=False)
    loss = mse_loss(pred, clean, mask)
    base_loss = loss.item()
    loss.backward()

    # Gradients below this are unmeasurable by central differences at the
    # given step: double-precision evaluation of a loss of size L carries
    # ~L*1e-12 of rounding noise, i.e. ~L*1e-12/(2*step) on the derivative.
    measurable = max(1e-7, abs(base_loss) * 5e-6)

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, p in model.named_parameters():
        analytic_full = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        analytic = analytic_full.reshape(-1)
        n = min(flat.size, max(samples_per_tensor, 1))
        idx = rng.choice(flat.size, size=n, replace=False) if flat.size > n \
            else np.arange(flat.size)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_value()
            flat[i] = orig - step
            lo = loss_value()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = analytic[i]
            scale = max(abs(a), abs(numeric))
            if scale >= measurable:
                worst = max(worst, abs(a - numeric) / scale)
        report.per_tensor[name] = (worst, int(n))
    return report
