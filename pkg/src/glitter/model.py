"""Small differentiable classifiers with hand-written backprop.

Two architectures share one contract:

* ``boe`` -- bag of embeddings: mean of token embeddings (unknown words go
  to a shared OOV row), then a tanh MLP head.
* ``mlp`` -- tanh MLP on dense feature vectors.

Everything is float64. Weight matrices are stored ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, TrainingAborted, ValidationError

ARCHS = ("boe", "mlp")


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def build_vocab(texts: Sequence[str]) -> dict[str, int]:
    """Word -> index in first-seen order. The OOV row is ``len(vocab)``."""
    vocab: dict[str, int] = {}
    for text in texts:
        for tok in tokenize(text):
            if tok not in vocab:
                vocab[tok] = len(vocab)
    return vocab


@dataclass
class ModelParams:
    arch: str
    dims: dict
    weights: list
    biases: list
    embedding: np.ndarray | None = None
    vocab: dict | None = None
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return int(self.dims["C"])

    def arrays(self) -> list[np.ndarray]:
        out = [self.embedding] if self.embedding is not None else []
        return out + list(self.weights) + list(self.biases)

    def copy(self) -> "ModelParams":
        emb = None if self.embedding is None else self.embedding.copy()
        return ModelParams(self.arch, dict(self.dims), [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], emb, self.vocab, self.seed)


@dataclass
class Gradients:
    weights: list
    biases: list
    embedding: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = [self.embedding] if self.embedding is not None else []
        return out + list(self.weights) + list(self.biases)

    def __add__(self, other: "Gradients") -> "Gradients":
        emb = None
        if self.embedding is not None:
            emb = self.embedding + other.embedding
        return Gradients([a + b for a, b in zip(self.weights, other.weights)],
                         [a + b for a, b in zip(self.biases, other.biases)], emb)

    def scale(self, factor: float) -> "Gradients":
        emb = None if self.embedding is None else self.embedding * factor
        return Gradients([w * factor for w in self.weights], [b * factor for b in self.biases], emb)


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray = field(init=False)

    def __post_init__(self):
        z = np.asarray(self.logits, dtype=np.float64)
        object.__setattr__(self, "logits", z)
        e = np.exp(z - z.max())
        object.__setattr__(self, "probabilities", e / e.sum())

    @property
    def label(self) -> int:
        return int(np.argmax(self.logits))


@dataclass
class Encoded:
    """A batch of inputs in the layout the forward pass wants."""

    n: int
    features: np.ndarray | None = None
    ids: np.ndarray | None = None
    offsets: np.ndarray | None = None


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _layer_sizes(arch: str, dims: dict) -> list[int]:
    first = dims["d"] if arch == "boe" else dims["input_dim"]
    return [int(first), *[int(h) for h in dims.get("hidden", [])], int(dims["C"])]


def init_model(arch: str, dims: dict, seed: int, vocab: dict | None = None) -> ModelParams:
    """Glorot-uniform weights, zero biases.

    ``dims`` keys: ``C`` and ``hidden`` always; ``V`` and ``d`` for boe
    (``V`` counts the OOV row); ``input_dim`` for mlp.
    """
    if arch not in ARCHS:
        raise ConfigError(f"unknown architecture {arch!r}")
    dims = dict(dims)
    dims["hidden"] = [int(h) for h in dims.get("hidden", [])]
    if arch == "boe" and vocab is not None:
        dims.setdefault("V", len(vocab) + 1)
        if dims["V"] != len(vocab) + 1:
            raise ConfigError(f"V={dims['V']} does not match vocabulary size {len(vocab)} + 1")
    required = ("V", "d", "C") if arch == "boe" else ("input_dim", "C")
    for key in required:
        if int(dims.get(key, 0)) <= 0:
            raise ConfigError(f"dimension {key!r} must be positive")
    if any(h <= 0 for h in dims["hidden"]):
        raise ConfigError("hidden sizes must be positive")

    rng = np.random.default_rng(int(seed) % 2**63)
    embedding = None
    if arch == "boe":
        V, d = int(dims["V"]), int(dims["d"])
        s = np.sqrt(6.0 / (V + d))
        embedding = rng.uniform(-s, s, size=(V, d))
    sizes = _layer_sizes(arch, dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(arch, dims, weights, biases, embedding, vocab, int(seed))


def clone_fresh(m: ModelParams, seed: int) -> ModelParams:
    return init_model(m.arch, m.dims, seed, m.vocab)


# ---------------------------------------------------------------------------
# encoding / forward / backward
# ---------------------------------------------------------------------------

def token_ids(m: ModelParams, x) -> np.ndarray:
    toks = tokenize(x) if isinstance(x, str) else list(x)
    if not toks:
        raise ValidationError("empty token list")
    oov = len(m.vocab)
    return np.array([m.vocab.get(t, oov) for t in toks], dtype=np.int64)


def encode(m: ModelParams, inputs: Sequence) -> Encoded:
    if m.arch == "mlp":
        if len(inputs) == 0:
            return Encoded(0, features=np.zeros((0, m.dims["input_dim"])))
        if isinstance(inputs[0], str):
            raise ValidationError("mlp model needs feature-vector inputs")
        feats = np.asarray(inputs, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != m.dims["input_dim"]:
            raise ValidationError(f"expected inputs of dimension {m.dims['input_dim']}, got shape {feats.shape}")
        return Encoded(len(feats), features=feats)
    if len(inputs) and not isinstance(inputs[0], (str, list)):
        raise ValidationError("boe model needs text inputs")
    return encode_ids(m, [token_ids(m, x) for x in inputs])


def encode_ids(m: ModelParams, id_arrays: Sequence[np.ndarray]) -> Encoded:
    lengths = np.array([len(a) for a in id_arrays], dtype=np.int64)
    offsets = np.zeros(len(id_arrays) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    ids = np.concatenate(id_arrays) if id_arrays else np.zeros(0, dtype=np.int64)
    return Encoded(len(id_arrays), ids=ids, offsets=offsets)


def forward_batch(m: ModelParams, enc: Encoded) -> tuple[np.ndarray, list]:
    """Logits ``(n, C)`` and the activation list needed by :func:`backward_batch`."""
    if m.arch == "boe":
        h = kernels.segment_mean(m.embedding, enc.ids, enc.offsets)
    else:
        h = enc.features
    acts = [h]
    last = len(m.weights) - 1
    for i, (W, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ W + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return h, acts


def backward_batch(m: ModelParams, enc: Encoded, acts: list, dlogits: np.ndarray) -> Gradients:
    """Gradient of ``sum(logits * dlogits)`` with respect to every parameter."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != acts[-1].shape:
        raise ValidationError(f"loss gradient shape {dlogits.shape} != logits shape {acts[-1].shape}")
    n_layers = len(m.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    delta = dlogits
    for i in range(n_layers - 1, -1, -1):
        h_prev = acts[i]
        dW[i] = h_prev.T @ delta
        db[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ m.weights[i].T) * (1.0 - h_prev * h_prev)
        elif m.arch == "boe":
            delta = delta @ m.weights[0].T
    demb = None
    if m.arch == "boe":
        demb = kernels.segment_mean_grad(delta, enc.ids, enc.offsets, m.embedding.shape[0])
    return Gradients(dW, db, demb)


def logits_batch(m: ModelParams, inputs: Sequence) -> np.ndarray:
    return forward_batch(m, encode(m, inputs))[0]


def forward(m: ModelParams, x) -> Prediction:
    logits, _ = forward_batch(m, encode(m, [x]))
    return Prediction(logits[0])


def backward(m: ModelParams, x, loss_grad_wrt_logits) -> Gradients:
    g = np.asarray(loss_grad_wrt_logits, dtype=np.float64)
    if g.shape != (m.num_classes,):
        raise ValidationError(f"loss gradient must have length {m.num_classes}, got shape {g.shape}")
    enc = encode(m, [x])
    _, acts = forward_batch(m, enc)
    return backward_batch(m, enc, acts, g[None, :])


def zero_gradients(m: ModelParams) -> Gradients:
    emb = None if m.embedding is None else np.zeros_like(m.embedding)
    return Gradients([np.zeros_like(w) for w in m.weights], [np.zeros_like(b) for b in m.biases], emb)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

def sgd_step(m: ModelParams, g: Gradients, lr: float) -> ModelParams:
    """``theta <- theta - lr * grad`` as a new parameter set."""
    if isinstance(m, Teacher):
        raise TypeError("a frozen Teacher cannot be updated")
    for arr in g.arrays():
        if not np.all(np.isfinite(arr)):
            raise TrainingAborted("non-finite gradient entry; aborting update")
    if len(g.weights) != len(m.weights):
        raise ValidationError("gradient/model layer count mismatch")
    for p, q in zip(m.arrays(), g.arrays()):
        if p.shape != q.shape:
            raise ValidationError(f"gradient shape {q.shape} != parameter shape {p.shape}")
    emb = None if m.embedding is None else m.embedding - lr * g.embedding
    return ModelParams(m.arch, m.dims, [w - lr * dw for w, dw in zip(m.weights, g.weights)],
                       [b - lr * d for b, d in zip(m.biases, g.biases)], emb, m.vocab, m.seed)


@dataclass(frozen=True)
class Schedule:
    base_lr: float
    warmup_ratio: float
    total_steps: int


def lr_at(schedule: Schedule, step: int) -> float:
    """Linear warmup from 0 to ``base_lr``, then linear decay to 0."""
    total = schedule.total_steps
    if total <= 0:
        raise ConfigError("total_steps must be positive")
    if not 0.0 <= schedule.warmup_ratio < 1.0:
        raise ConfigError("warmup_ratio must lie in [0, 1)")
    if not 0 <= step <= total:
        raise ConfigError(f"step {step} outside [0, {total}]")
    warm = int(np.floor(schedule.warmup_ratio * total))
    if step < warm:
        return schedule.base_lr * step / warm
    return schedule.base_lr * (total - step) / (total - warm)


# ---------------------------------------------------------------------------
# teachers
# ---------------------------------------------------------------------------

class Teacher:
    """Read-only snapshot of a trained model, optionally with cached logits."""

    __slots__ = ("params", "cache")

    def __init__(self, params: ModelParams, cache: dict | None = None):
        frozen = params.copy()
        for arr in frozen.arrays():
            arr.flags.writeable = False
        object.__setattr__(self, "params", frozen)
        object.__setattr__(self, "cache", cache)

    def __setattr__(self, name, value):
        raise AttributeError("Teacher is immutable")

    def with_cache(self, cache: dict) -> "Teacher":
        C = self.params.num_classes
        for key, v in cache.items():
            if np.shape(v) != (C,):
                raise ValidationError(f"cached logits for {key!r} do not have length {C}")
        return Teacher(self.params, cache)

    def logits(self, inputs: Sequence) -> np.ndarray:
        return logits_batch(self.params, inputs)


def freeze(m: ModelParams) -> Teacher:
    return Teacher(m)


def teacher_forward(t: Teacher, x, key: str | None = None) -> Prediction:
    if key is not None and t.cache is not None and key in t.cache:
        return Prediction(t.cache[key])
    return forward(t.params, x)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "glitter-checkpoint/1"


def save_checkpoint(m: ModelParams, path) -> None:
    vocab = None
    if m.vocab is not None:
        vocab = [w for w, _ in sorted(m.vocab.items(), key=lambda kv: kv[1])]
    doc = {
        "format": CHECKPOINT_FORMAT,
        "arch": m.arch,
        "dims": m.dims,
        "seed": m.seed,
        "vocab": vocab,
        "embedding": None if m.embedding is None else m.embedding.ravel().tolist(),
        "weights": [w.ravel().tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a checkpoint ({doc.get('format')!r})")
    arch, dims = doc["arch"], doc["dims"]
    vocab = None if doc["vocab"] is None else {w: i for i, w in enumerate(doc["vocab"])}
    sizes = _layer_sizes(arch, dims)
    weights = [np.array(w, dtype=np.float64).reshape(a, b) for w, a, b in zip(doc["weights"], sizes[:-1], sizes[1:])]
    biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    emb = None
    if doc["embedding"] is not None:
        emb = np.array(doc["embedding"], dtype=np.float64).reshape(dims["V"], dims["d"])
    return ModelParams(arch, dims, weights, biases, emb, vocab, doc["seed"])
