"""Seeded, deterministic training: Adam with decoupled weight decay, global
gradient-norm clipping, and best-checkpoint selection by validation mAP."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import HEAD_NAMES, HeadParams, backward, forward, init_params
from .errors import TrainingError
from .loss import AslConfig, asl, sigmoid
from .metrics import average_precision, roc_auc
from .validation import bags_feature_dim

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# entropy tags keeping shuffle and dropout RNG streams disjoint
_SHUFFLE_TAG = 1
_DROPOUT_TAG = 2


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one run. batch_size is pinned to 1 because bag
    sizes vary; everything else mirrors the package defaults."""

    lr: float = 0.001
    weight_decay: float = 0.001
    clip: float = 0.08
    epochs: int = 25
    batch_size: int = 1
    head: str = "mrl"
    hidden: int = 128
    dropout_rate: float = 0.25
    seed: int = 0
    asl: AslConfig = field(default_factory=AslConfig)
    stream_mode: str = "bag-union"

    def __post_init__(self):
        if self.batch_size != 1:
            raise TrainingError("batch_size is fixed at 1 (variable bag sizes)")
        if self.head not in HEAD_NAMES:
            raise TrainingError(f"unknown head {self.head!r}")
        if self.epochs < 0 or self.lr <= 0 or self.weight_decay < 0:
            raise TrainingError("epochs >= 0, lr > 0, weight_decay >= 0 required")
        if self.hidden < 1:
            raise TrainingError("hidden width must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise TrainingError("dropout_rate must be in [0, 1)")
        if self.seed < 0:
            raise TrainingError("seed must be non-negative (RNG entropy)")
        if self.stream_mode not in ("bag-union", "instance-concat"):
            raise TrainingError(f"unknown stream_mode {self.stream_mode!r}")


@dataclass
class AdamState:
    """First/second moment accumulators mirroring HeadParams, plus step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: HeadParams) -> "AdamState":
        return cls(
            m={n: np.zeros_like(getattr(params, n)) for n in params.names()},
            v={n: np.zeros_like(getattr(params, n)) for n in params.names()},
        )


def adam_step(
    params: HeadParams,
    grads: HeadParams,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[HeadParams, AdamState]:
    """One bias-corrected Adam update, then decoupled decay theta *= 1 - lr*wd."""
    t = state.t + 1
    new_m, new_v, new_p = {}, {}, {}
    for name in params.names():
        g = getattr(grads, name)
        theta = getattr(params, name)
        if g.shape != theta.shape:
            raise TrainingError(f"gradient shape mismatch on {name}")
        m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if weight_decay:
            theta = theta * (1.0 - lr * weight_decay)
        new_m[name], new_v[name], new_p[name] = m, v, theta
    return HeadParams(**new_p), AdamState(m=new_m, v=new_v, t=t)


def clip_gradients(grads: HeadParams, max_norm: float) -> HeadParams:
    """Scale all gradients by max_norm/||g|| when the global L2 norm exceeds it."""
    if max_norm <= 0:
        raise TrainingError("max_norm must be positive")
    total = sum(float(np.sum(getattr(grads, n) ** 2)) for n in grads.names())
    norm = np.sqrt(total)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return HeadParams(**{n: getattr(grads, n) * scale for n in grads.names()})


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_map: float
    val_auc: float | None


def predict_probs(head: str, params: HeadParams, bags) -> np.ndarray:
    """Eval-mode per-bag label probabilities, stacked (n_bags, K)."""
    rows = []
    for bag in bags:
        logits, _, _ = forward(head, bag.instances, params)
        rows.append(sigmoid(logits))
    return np.stack(rows)


def _macro_scores(head, params, bags) -> tuple[float, float | None]:
    probs = predict_probs(head, params, bags)
    labels = np.stack([b.labels.as_array() for b in bags])
    aps, aucs = [], []
    for k in range(labels.shape[1]):
        ap = average_precision(probs[:, k], labels[:, k])
        if not np.isnan(ap):
            aps.append(ap)
        auc = roc_auc(probs[:, k], labels[:, k])
        if not np.isnan(auc):
            aucs.append(auc)
    val_map = float(np.mean(aps)) if aps else 0.0
    val_auc = float(np.mean(aucs)) if aucs else None
    return val_map, val_auc


def train(bags_train, bags_val, cfg: TrainConfig) -> tuple[HeadParams, list[EpochStats]]:
    """Run the per-bag loop and return the snapshot with the best validation mAP.

    Each epoch shuffles with an epoch-derived seed, then per bag: forward in
    train mode, loss, backward, clip, Adam. Ties in validation mAP keep the
    earliest snapshot. Fully determined by (seed, data, cfg).
    """
    bags_train = list(bags_train)
    bags_val = list(bags_val)
    if not bags_train:
        raise TrainingError("empty training split")
    dim = bags_feature_dim(bags_train + bags_val)
    n_labels = len(bags_train[0].labels.binary)

    params = init_params(cfg.hidden, dim, n_labels, seed=cfg.seed)
    state = AdamState.zeros_like(params)
    best = params.copy()
    best_map = -np.inf
    history: list[EpochStats] = []

    for epoch in range(cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, _SHUFFLE_TAG, epoch])
        ).permutation(len(bags_train))
        losses = []
        for step, idx in enumerate(order):
            bag = bags_train[int(idx)]
            logits, _, cache = forward(
                cfg.head,
                bag.instances,
                params,
                train_mode=True,
                dropout_rate=cfg.dropout_rate,
                seed=np.random.SeedSequence([cfg.seed, _DROPOUT_TAG, epoch, step]),
            )
            loss, dlogits = asl(logits, bag.labels.as_array(), cfg.asl)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss on bag {bag.wsi_id!r} (epoch {epoch}, step {step})"
                )
            grads = backward(cache, params, dlogits)
            if cfg.clip and cfg.clip > 0:
                grads = clip_gradients(grads, cfg.clip)
            params, state = adam_step(params, grads, state, cfg.lr, cfg.weight_decay)
            losses.append(loss)
        val_map, val_auc = _macro_scores(cfg.head, params, bags_val or bags_train)
        history.append(EpochStats(epoch, float(np.mean(losses)), val_map, val_auc))
        if val_map > best_map:
            best = params.copy()
            best_map = val_map
    return best, history


def data_digest(bags) -> str:
    """Order-sensitive sha256 over bag ids, labels, domains, and instance bytes."""
    h = hashlib.sha256()
    for bag in bags:
        h.update(bag.wsi_id.encode("utf-8"))
        h.update(bag.labels.as_array().tobytes())
        h.update(bag.domains.tobytes())
        h.update(np.ascontiguousarray(bag.instances).tobytes())
    return h.hexdigest()


def write_run_metadata(
    path: str | Path,
    cfg: TrainConfig,
    history: list[EpochStats],
    digests: dict[str, str],
    extra: dict[str, str] | None = None,
) -> None:
    """Structured text capture of a run: config, digests, per-epoch metrics."""
    lines = ["[config]"]
    for key in ("head", "hidden", "dropout_rate", "lr", "weight_decay", "clip",
                "epochs", "batch_size", "seed", "stream_mode"):
        lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append(f"asl_gamma_pos = {cfg.asl.gamma_pos}")
    lines.append(f"asl_gamma_neg = {cfg.asl.gamma_neg}")
    lines.append(f"asl_margin = {cfg.asl.margin}")
    if extra:
        lines.append("")
        lines.append("[inputs]")
        for key in sorted(extra):
            lines.append(f"{key} = {extra[key]}")
    lines.append("")
    lines.append("[data_digests]")
    for key in sorted(digests):
        lines.append(f"{key} = {digests[key]}")
    lines.append("")
    lines.append("[epochs]")
    for rec in history:
        val_auc = "undefined" if rec.val_auc is None else repr(rec.val_auc)
        lines.append(
            f"epoch_{rec.epoch} = loss={rec.train_loss!r} "
            f"val_map={rec.val_map!r} val_auc={val_auc}"
        )
    if history:
        best = max(range(len(history)), key=lambda i: (history[i].val_map, -i))
        lines.append("")
        lines.append("[selection]")
        lines.append(f"best_epoch = {history[best].epoch}")
        lines.append(f"best_val_map = {history[best].val_map!r}")
    Path(path).write_text("\n".join(lines) + "\n")
