"""Linear probe on frozen embeddings: combined real+synthetic loss, AdamW,
early stopping.

Each optimization step draws one real mini-batch and, when synthetic data is
present, one synthetic mini-batch; the training loss is the sum of the two
batch-mean cross-entropies.  Validation loss is computed on real validation
embeddings only, and the returned model is the one with the best validation
loss seen.  All internal math runs in float64 for stable, reproducible
trajectories; the exported model is float32.

Checkpoint format ``PRBV1``: magic bytes, little-endian u32 class count C and
u32 dimension d, then W (C*d float32) and b (C float32), with class order and
training metadata in ``<file>.meta.json``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import DataError
from .rng import SplitMix64

PROBE_MAGIC = b"PRBV1"
_PROBE_HEADER = struct.Struct("<II")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    real_batch: int = 32  # effective size is min(real_batch, n_real)
    synthetic_batch: int = 512
    patience: int = 5
    max_epochs: int = 200
    seed: int = 0

    def validate(self) -> None:
        if min(self.lr, self.weight_decay, self.eps) < 0:
            raise DataError("lr, weight_decay, and eps must be non-negative")
        if self.patience < 1:
            raise DataError("patience must be >= 1")
        if self.max_epochs < 1 or self.real_batch < 1 or self.synthetic_batch < 1:
            raise DataError("epochs and batch sizes must be positive")


@dataclass
class ProbeModel:
    W: np.ndarray  # (C, d) float32
    b: np.ndarray  # (C,) float32
    classes: tuple[str, ...]

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float32)
        self.b = np.asarray(self.b, dtype=np.float32)
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise DataError("probe parameters must be finite")

    @property
    def d(self) -> int:
        return self.W.shape[1]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean cross entropy and its gradient w.r.t. the logits.

    Numerically stable via per-row max subtraction; the gradient is
    (softmax - onehot) / batch.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DataError(f"bad shapes: logits {logits.shape}, labels {labels.shape}")
    if not np.isfinite(logits).all():
        raise DataError("non-finite logits")
    n, c = logits.shape
    if n == 0:
        raise DataError("empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(f"labels must lie in [0, {c})")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = float(-log_probs[np.arange(n), labels].mean())

    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def _linear_grads(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    if X.shape[1] != W.shape[1]:
        raise DataError(f"embedding dim {X.shape[1]} != model dim {W.shape[1]}")
    logits = X @ W.T + b
    loss, g_logits = softmax_cross_entropy(logits, y)
    return loss, g_logits.T @ X, g_logits.sum(axis=0)


def combined_loss(
    W: np.ndarray,
    b: np.ndarray,
    real: tuple[np.ndarray, np.ndarray],
    synthetic: tuple[np.ndarray, np.ndarray],
) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum of the real-batch and synthetic-batch mean cross entropies.

    Returns (loss, dW, db) where the gradients are the sums of the two
    independent per-batch gradients.
    """
    Xr, yr = real
    Xs, ys = synthetic
    if len(yr) == 0 or len(ys) == 0:
        raise DataError("combined loss requires non-empty real and synthetic batches")
    loss_r, gw_r, gb_r = _linear_grads(W, b, Xr, yr)
    loss_s, gw_s, gb_s = _linear_grads(W, b, Xs, ys)
    return loss_r + loss_s, gw_r + gw_s, gb_r + gb_s


class AdamW:
    """Decoupled weight decay Adam: p <- p - lr*(m_hat/(sqrt(v_hat)+eps)) - lr*wd*p.

    Parameters listed in ``decay_exclude`` (the bias by default) skip the
    decay term.  Moments are bias-corrected with the usual 1-beta^t factors.
    """

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig,
                 decay_exclude: tuple[str, ...] = ("b",)):
        self.params = params
        self.cfg = cfg
        self.decay_exclude = decay_exclude
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        b1, b2 = self.cfg.betas
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = grads[name]
            if not np.isfinite(g).all():
                raise DataError(f"non-finite gradient for {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.cfg.eps)
            # both terms evaluate against the pre-step parameter:
            # p <- p - lr * m_hat/(sqrt(v_hat)+eps) - lr * wd * p
            decay = (
                self.cfg.lr * self.cfg.weight_decay * p
                if (name not in self.decay_exclude and self.cfg.weight_decay)
                else None
            )
            p -= self.cfg.lr * update
            if decay is not None:
                p -= decay


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    cfg: TrainConfig,
    state: AdamW | None = None,
    decay_exclude: tuple[str, ...] = (),
) -> AdamW:
    """One optimizer step; creates and returns the state on first use."""
    if state is None:
        state = AdamW(params, cfg, decay_exclude=decay_exclude)
    state.step(grads)
    return state


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopped_early": self.stopped_early,
        }


def _label_indices(m: EmbeddingMatrix, classes: tuple[str, ...]) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[r.label] for r in m.rows], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]!r} not in class set {classes}") from exc


def train_probe(
    real: EmbeddingMatrix,
    syn: EmbeddingMatrix | None,
    val: EmbeddingMatrix,
    cfg: TrainConfig,
    classes: tuple[str, ...] | None = None,
    val_loss_fn=None,
) -> tuple[ProbeModel, TrainHistory]:
    """Train the linear probe; see the module docstring for the protocol.

    ``val_loss_fn(W, b) -> float`` overrides the validation criterion (used
    to script early-stopping schedules in tests).
    """
    cfg.validate()
    if real.n == 0:
        raise DataError("real training set is empty")
    if val.n == 0:
        raise DataError("validation set is empty")
    if classes is None:
        classes = tuple(sorted(set(real.labels())))
    if syn is not None and syn.d != real.d:
        raise DataError(f"synthetic dim {syn.d} != real dim {real.d}")
    if val.d != real.d:
        raise DataError(f"validation dim {val.d} != real dim {real.d}")

    Xr = real.data.astype(np.float64)
    yr = _label_indices(real, classes)
    Xv = val.data.astype(np.float64)
    yv = _label_indices(val, classes)
    Xs = ys = None
    if syn is not None and syn.n > 0:
        Xs = syn.data.astype(np.float64)
        ys = _label_indices(syn, classes)

    d = real.d
    C = len(classes)
    W = np.zeros((C, d), dtype=np.float64)
    b = np.zeros(C, dtype=np.float64)
    opt = AdamW({"W": W, "b": b}, cfg)
    gen = SplitMix64(cfg.seed)

    if val_loss_fn is None:

        def val_loss_fn(W, b):
            loss, _ = softmax_cross_entropy(Xv @ W.T + b, yv)
            return loss

    batch = min(cfg.real_batch, real.n)
    history = TrainHistory()
    best = (W.copy(), b.copy())
    since_improve = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = gen.shuffle(list(range(real.n)))
        train_losses = []
        for start in range(0, real.n, batch):
            idx = order[start : start + batch]
            br = (Xr[idx], yr[idx])
            if Xs is not None:
                sidx = [gen.below(Xs.shape[0]) for _ in range(cfg.synthetic_batch)]
                loss, gw, gb = combined_loss(W, b, br, (Xs[sidx], ys[sidx]))
            else:
                loss, gw, gb = _linear_grads(W, b, *br)
            opt.step({"W": gw, "b": gb})
            train_losses.append(loss)

        val_loss = float(val_loss_fn(W, b))
        history.epochs.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(train_losses)),
                "val_loss": val_loss,
            }
        )
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best = (W.copy(), b.copy())
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= cfg.patience:
                history.stopped_early = True
                break

    model = ProbeModel(W=best[0].astype(np.float32), b=best[1].astype(np.float32), classes=classes)
    return model, history


def predict(model: ProbeModel, emb: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    """Argmax class index per row; ties break toward the lowest index."""
    X = emb.data if isinstance(emb, EmbeddingMatrix) else np.asarray(emb)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DataError(f"expected (n, {model.d}) embeddings, got {X.shape}")
    logits = X.astype(np.float64) @ model.W.T.astype(np.float64) + model.b.astype(np.float64)
    return np.argmax(logits, axis=1)


def predict_labels(model: ProbeModel, emb: EmbeddingMatrix | np.ndarray) -> list[str]:
    return [model.classes[i] for i in predict(model, emb)]


def save_probe(model: ProbeModel, path: str | Path, extra_meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    C, d = model.W.shape
    blob = PROBE_MAGIC + _PROBE_HEADER.pack(C, d)
    blob += model.W.astype("<f4").tobytes(order="C")
    blob += model.b.astype("<f4").tobytes(order="C")
    path.write_bytes(blob)
    meta = {"classes": list(model.classes)}
    if extra_meta:
        meta.update(extra_meta)
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_probe(path: str | Path) -> ProbeModel:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(PROBE_MAGIC)] != PROBE_MAGIC:
        raise DataError(f"bad magic at offset 0: {blob[:len(PROBE_MAGIC)]!r}")
    off = len(PROBE_MAGIC)
    C, d = _PROBE_HEADER.unpack(blob[off : off + _PROBE_HEADER.size])
    off += _PROBE_HEADER.size
    expected = off + 4 * (C * d + C)
    if len(blob) != expected:
        raise DataError(f"truncated checkpoint: {len(blob)} bytes, expected {expected}")
    W = np.frombuffer(blob, dtype="<f4", count=C * d, offset=off).reshape(C, d).copy()
    b = np.frombuffer(blob, dtype="<f4", count=C, offset=off + 4 * C * d).copy()
    meta = json.loads(Path(str(path) + ".meta.json").read_text("utf-8"))
    return ProbeModel(W=W, b=b, classes=tuple(meta["classes"]))
