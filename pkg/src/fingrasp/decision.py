"""Grasp-type decision network.

A seven-layer fully connected net with one skip connection maps a flattened
representation grid (scores and normalized widths, 120 values) to a sigmoid
score for every (angle, depth, type) triple (12 x 5 x 16 = 960 outputs).
Supervision is sparse: each training sample labels exactly one executed cell,
and the loss is binary cross-entropy at that cell only.

Everything is plain numpy with hand-written backprop and Adam, deterministic
for a fixed seed.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, WeightFileError
from .representation import RepGrid

EPS = 1e-7
INPUT_DIM = 120
HIDDEN_DIM = 256
OUTPUT_SHAPE = (12, 5, 16)
OUTPUT_DIM = 960
LAYER_DIMS = (INPUT_DIM, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM,
              HIDDEN_DIM, HIDDEN_DIM, OUTPUT_DIM)

WEIGHT_MAGIC = b"FGDW"
WEIGHT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # (last epoch of segment, learning rate), descending
    schedule: tuple = ((10, 1e-3), (16, 1e-4), (20, 1e-5))
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        rates = [lr for _, lr in self.schedule]
        if not rates or any(lr <= 0 for lr in rates):
            raise ValueError("learning rates must be positive")
        if any(b >= a for a, b in zip(rates, rates[1:])):
            raise ValueError("learning-rate schedule must descend")

    def lr_for_epoch(self, epoch: int) -> float:
        for until, lr in self.schedule:
            if epoch <= until:
                return lr
        return self.schedule[-1][1]


@dataclass
class NetworkParams:
    """Seven (out, in) weight matrices and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != 7 or len(self.biases) != 7:
            raise ValueError("expected 7 weight/bias pairs")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (LAYER_DIMS[i + 1], LAYER_DIMS[i])
            if w.shape != expect or b.shape != (LAYER_DIMS[i + 1],):
                raise ValueError(f"layer {i} shape {w.shape} != {expect}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i} has non-finite values")

    @staticmethod
    def init(seed) -> "NetworkParams":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(LAYER_DIMS[:-1], LAYER_DIMS[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                      size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return NetworkParams(weights, biases)

    @staticmethod
    def zeros() -> "NetworkParams":
        return NetworkParams(
            [np.zeros((o, i)) for i, o in zip(LAYER_DIMS[:-1], LAYER_DIMS[1:])],
            [np.zeros(o) for o in LAYER_DIMS[1:]])

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases])


@dataclass
class ScoreGrid:
    """Per-(angle, depth, type) success probabilities, strictly inside (0, 1)."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64).reshape(OUTPUT_SHAPE)
        p = np.clip(p, EPS, 1.0 - EPS)
        if not np.isfinite(p).all():
            raise ValueError("probabilities must be finite")
        self.probabilities = p

    def best(self) -> tuple[int, int, int]:
        flat = int(np.argmax(self.probabilities))
        a, rem = divmod(flat, OUTPUT_SHAPE[1] * OUTPUT_SHAPE[2])
        d, c = divmod(rem, OUTPUT_SHAPE[2])
        return a, d, c


def encode_rep(rep: RepGrid) -> np.ndarray:
    """Flatten a grid to the 120-value network input: scores then widths
    normalized by max_width, invalid widths as 0."""
    w = np.nan_to_num(rep.widths / rep.config.max_width, nan=0.0)
    return np.concatenate([rep.scores.reshape(-1), w.reshape(-1)])


def encode_reps(reps) -> np.ndarray:
    return np.stack([encode_rep(r) for r in reps])


# ---------------------------------------------------------------------------
# forward / loss / backward
# ---------------------------------------------------------------------------

def _forward_ops(W, b, a: np.ndarray) -> np.ndarray:
    """Shared layer sequence; dtype follows the inputs."""
    a = a @ W[0].T
    a += b[0]
    np.maximum(a, 0.0, out=a)
    a1 = a.copy()
    for i in (1, 2, 3):
        a = a @ W[i].T
        a += b[i]
        np.maximum(a, 0.0, out=a)
    a = a @ W[4].T
    a += b[4]
    a += a1
    np.maximum(a, 0.0, out=a)
    a = a @ W[5].T
    a += b[5]
    np.maximum(a, 0.0, out=a)
    a = a @ W[6].T
    a += b[6]
    np.negative(a, out=a)
    np.exp(a, out=a)
    a += 1.0
    np.reciprocal(a, out=a)
    np.clip(a, EPS, 1.0 - EPS, out=a)
    return a


def _checked_input(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64).reshape(-1, INPUT_DIM)
    if not np.isfinite(X).all():
        raise ValueError("network input must be finite")
    return X


def forward_batch(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    """Double-precision probabilities (N, 960); the reference path shared by
    training, gradient checks, and offline metrics."""
    X = _checked_input(X)
    return _forward_ops(params.weights, params.biases, X)


def infer_batch(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    """Single-precision probabilities (N, 960) for candidate scoring.

    This is the planner's ranking path: one fused batch in float32 keeps 500
    candidates inside the latency budget on a single core, and it agrees with
    forward_batch to float32 resolution (~1e-6)."""
    X = _checked_input(X)
    W = [w.astype(np.float32) for w in params.weights]
    b = [v.astype(np.float32) for v in params.biases]
    return _forward_ops(W, b, X.astype(np.float32))


def forward(params: NetworkParams, rep: RepGrid) -> ScoreGrid:
    return ScoreGrid(forward_batch(params, encode_rep(rep)[None, :])[0])


def predict_scores(params, rep: RepGrid) -> ScoreGrid:
    """Forward pass for inference; accepts params or a weight-file path."""
    if not isinstance(params, NetworkParams):
        params = load_params(params)
    return forward(params, rep)


def _forward_cached(params: NetworkParams, X: np.ndarray):
    """Forward keeping pre-activations and activations for backprop."""
    W, b = params.weights, params.biases
    zs, acts = [], [X]
    a = X
    a1 = None
    for i in range(7):
        z = a @ W[i].T + b[i]
        if i == 4:
            z = z + a1
        zs.append(z)
        if i < 6:
            a = np.maximum(z, 0.0)
            acts.append(a)
            if i == 0:
                a1 = a
        else:
            a = 1.0 / (1.0 + np.exp(-z))
    return zs, acts, a


def _flat_cell(labels: np.ndarray) -> np.ndarray:
    A, D, C = OUTPUT_SHAPE
    return labels[:, 0] * (D * C) + labels[:, 1] * C + labels[:, 2]


def masked_loss(probs, labels) -> float:
    """Mean binary cross-entropy at each sample's executed (a, d, c) cell.

    probs: (N, A, D, C) or (N, 960); labels: (N, 4) int rows (a, d, c, y).
    Every non-executed cell contributes exactly zero.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(len(probs), OUTPUT_DIM)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, 4)
    if len(labels) == 0:
        raise ValueError("batch must contain at least one sample")
    if len(labels) != len(probs):
        raise ValueError("probs and labels disagree on batch size")
    p = probs[np.arange(len(labels)), _flat_cell(labels)]
    p = np.clip(p, EPS, 1.0 - EPS)
    y = labels[:, 3].astype(np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def backward(params: NetworkParams, X: np.ndarray, labels: np.ndarray):
    """Exact gradients of masked_loss over the batch.

    Returns (loss, weight grads, bias grads). Output-layer rows feeding
    non-executed cells receive exactly zero gradient.
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, INPUT_DIM)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, 4)
    if len(labels) == 0:
        raise ValueError("batch must contain at least one sample")
    N = len(X)
    W = params.weights
    zs, acts, p = _forward_cached(params, X)
    idx = _flat_cell(labels)
    rows = np.arange(N)
    y = labels[:, 3].astype(np.float64)
    pc = p[rows, idx]
    clipped = (pc < EPS) | (pc > 1.0 - EPS)
    loss = masked_loss(p, labels)
    dz = np.zeros_like(p)
    dz[rows, idx] = np.where(clipped, 0.0, pc - y) / N
    dW = [None] * 7
    db = [None] * 7
    dW[6] = dz.T @ acts[6]
    db[6] = dz.sum(axis=0)
    da = dz @ W[6]
    dz = da * (zs[5] > 0)
    dW[5] = dz.T @ acts[5]
    db[5] = dz.sum(axis=0)
    da = dz @ W[5]
    dz5 = da * (zs[4] > 0)
    dW[4] = dz5.T @ acts[4]
    db[4] = dz5.sum(axis=0)
    da = dz5 @ W[4]
    for i in (3, 2, 1):
        dz = da * (zs[i] > 0)
        dW[i] = dz.T @ acts[i]
        db[i] = dz.sum(axis=0)
        da = dz @ W[i]
    # skip connection: layer-1 activation also feeds layer-5 pre-activation
    da = da + dz5
    dz = da * (zs[0] > 0)
    dW[0] = dz.T @ acts[0]
    db[0] = dz.sum(axis=0)
    return loss, dW, db


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: NetworkParams
    loss_history: list[tuple[int, float, float]] = field(default_factory=list)
    diverged: bool = False


def prepare_samples(records) -> tuple[np.ndarray, np.ndarray]:
    """Encode trial records into network inputs and (a, d, c, y) labels."""
    X, labels = [], []
    for r in records:
        X.append(encode_rep(r.rep))
        labels.append([r.cell[0], r.cell[1], r.type_id, int(r.success)])
    if not X:
        raise InsufficientDataError("no training records")
    return np.stack(X), np.array(labels, dtype=np.int64)


def train(records, config: TrainConfig | None = None) -> TrainResult:
    """Seeded mini-batch Adam over the masked loss.

    A non-finite batch loss aborts training and returns the parameters saved
    at the end of the last fully finite epoch.
    """
    if config is None:
        config = TrainConfig()
    if isinstance(records, tuple) and len(records) == 2:
        X, labels = records
    else:
        X, labels = prepare_samples(records)
    if len(X) < 1:
        raise InsufficientDataError("training needs at least one sample")
    root = np.random.SeedSequence(config.seed)
    init_seed, shuffle_seed = root.spawn(2)
    params = NetworkParams.init(init_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    step = 0
    history: list[tuple[int, float, float]] = []
    checkpoint = params.copy()
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_for_epoch(epoch)
        order = shuffle_rng.permutation(len(X))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            loss, dW, db = backward(params, X[batch], labels[batch])
            if not np.isfinite(loss):
                return TrainResult(checkpoint, history, diverged=True)
            total += loss * len(batch)
            step += 1
            b1c = 1.0 - config.beta1 ** step
            b2c = 1.0 - config.beta2 ** step
            for i in range(7):
                for g, w, m, v in ((dW[i], params.weights[i], m_w[i], v_w[i]),
                                   (db[i], params.biases[i], m_b[i], v_b[i])):
                    m *= config.beta1
                    m += (1.0 - config.beta1) * g
                    v *= config.beta2
                    v += (1.0 - config.beta2) * g * g
                    w -= lr * (m / b1c) / (np.sqrt(v / b2c) + config.adam_eps)
        mean = total / len(X)
        history.append((epoch, lr, float(mean)))
        checkpoint = params.copy()
    return TrainResult(params, history, diverged=False)


def save_loss_history(history, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,lr,mean_loss\n")
        for epoch, lr, loss in history:
            fh.write(f"{epoch},{lr:.10g},{loss:.12g}\n")


# ---------------------------------------------------------------------------
# weight file I/O
# ---------------------------------------------------------------------------

def save_params(params: NetworkParams, path) -> None:
    """Versioned binary weight file with a trailing content hash."""
    parts = [struct.pack("<4sII", WEIGHT_MAGIC, WEIGHT_VERSION, 7)]
    for w, b in zip(params.weights, params.biases):
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(hashlib.sha256(blob).digest())


def load_params(path) -> NetworkParams:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise WeightFileError(f"{path}: {exc}") from exc
    if len(data) < 12 + 32:
        raise WeightFileError(f"{path}: truncated weight file")
    blob, digest = data[:-32], data[-32:]
    if hashlib.sha256(blob).digest() != digest:
        raise WeightFileError(f"{path}: checksum mismatch")
    magic, version, n_layers = struct.unpack_from("<4sII", blob, 0)
    if magic != WEIGHT_MAGIC:
        raise WeightFileError(f"{path}: bad magic {magic!r}")
    if version != WEIGHT_VERSION:
        raise WeightFileError(f"{path}: unsupported version {version}")
    off = 12
    dims = []
    for _ in range(n_layers):
        out_d, in_d = struct.unpack_from("<II", blob, off)
        dims.append((out_d, in_d))
        off += 8
    weights, biases = [], []
    for out_d, in_d in dims:
        wn = out_d * in_d * 8
        weights.append(np.frombuffer(blob, dtype="<f8", count=out_d * in_d,
                                     offset=off).reshape(out_d, in_d).copy())
        off += wn
        biases.append(np.frombuffer(blob, dtype="<f8", count=out_d,
                                    offset=off).copy())
        off += out_d * 8
    try:
        return NetworkParams(weights, biases)
    except ValueError as exc:
        raise WeightFileError(f"{path}: {exc}") from exc
