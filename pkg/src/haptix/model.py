"""Decoder-only transformer for haptic captioning, in plain numpy.

Small enough to train on a CPU in float64, this is a standard pre-norm
transformer: byte/haptic token embeddings plus sinusoidal positions, then
``n_layers`` blocks of causal multi-head attention and a GELU MLP (all
linear maps bias-free), a final layer norm, and a linear head to the
vocabulary.

Fine-tuning never touches the base weights.  Each attention query and
value projection carries a low-rank adapter pair ``(A, B)`` contributing
``scale * (x @ A) @ B``; ``A`` starts small-random and ``B`` starts at
zero, so the adapted model is exactly the base model at initialization.
Training updates only the adapter matrices and the embedding rows of the
haptic token range — everything a pretrained text model would not know.
:func:`merge_adapters` folds each adapter into its weight
(``W += scale * A @ B``) and zeroes the pair, leaving the forward pass
unchanged.

Gradients are hand-derived (exact, not approximated); the optimizer is
SGD with momentum.  Checkpoints round-trip bit-exactly through ``.npz``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "ModelConfig",
    "Model",
    "init_model",
    "forward",
    "cross_entropy",
    "loss_and_grads",
    "sequence_logprob",
    "logprob_and_grads",
    "MomentumSGD",
    "train_sft",
    "generate",
    "merge_adapters",
    "save_model",
    "load_model",
    "load_checkpoint_extra",
]

_LN_EPS = 1e-5
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and adapter hyperparameters."""

    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 1600
    lora_rank: int = 4
    lora_scale: float = 1.0
    head_gain: float = 1.0
    haptic_start: int = 0  # embedding rows [start, end) are trainable
    haptic_end: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")
        if self.head_gain <= 0:
            raise ValueError("head_gain must be positive")
        if not 0 <= self.haptic_start <= self.haptic_end <= self.vocab_size:
            raise ValueError("need 0 <= haptic_start <= haptic_end <= vocab_size")


@dataclass
class Model:
    """Model parameters keyed by name, plus the config that shaped them."""

    config: ModelConfig
    params: dict[str, np.ndarray]

    def trainable_names(self) -> list[str]:
        names = ["embed"]
        for i in range(self.config.n_layers):
            for w in ("wq", "wv"):
                names.append(f"l{i}.{w}.lora_a")
                names.append(f"l{i}.{w}.lora_b")
        return names


def _positional_encoding(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    dim = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d)
    enc = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


def init_model(config: ModelConfig, seed: int = 0) -> Model:
    """Create a model with random frozen base weights and fresh adapters.

    Linear weights are drawn at scale ``1/sqrt(d_in)`` so that, with
    layer-normed features of norm ``sqrt(d)``, logits land at unit scale
    — a frozen random head at a smaller scale would cap the achievable
    logit spread and make the loss untrainable.  The head uses
    ``head_gain/sqrt(d)``: because the head stays frozen, its scale sets
    how strongly caption-token gradients reach the adapters, and raising
    the gain is the supported way to speed up adapter-only training.
    Embeddings are drawn wide enough (0.5) to stay distinguishable next
    to the unit-amplitude positional code.  Adapter ``A`` matrices start
    small, ``B`` at zero.
    """
    rng = np.random.default_rng(seed)
    d, ff, r = config.d_model, config.d_ff, config.lora_rank
    params: dict[str, np.ndarray] = {}
    params["embed"] = rng.normal(0.0, 0.5, (config.vocab_size, d))
    for i in range(config.n_layers):
        for w in ("wq", "wk", "wv", "wo"):
            params[f"l{i}.{w}"] = rng.normal(0.0, 1.0 / math.sqrt(d), (d, d))
        params[f"l{i}.w1"] = rng.normal(0.0, 1.0 / math.sqrt(d), (d, ff))
        params[f"l{i}.w2"] = rng.normal(0.0, 1.0 / math.sqrt(ff), (ff, d))
        for w in ("wq", "wv"):
            params[f"l{i}.{w}.lora_a"] = rng.normal(0.0, 0.02, (d, r))
            params[f"l{i}.{w}.lora_b"] = np.zeros((r, d))
    params["head"] = rng.normal(
        0.0, config.head_gain / math.sqrt(d), (d, config.vocab_size)
    )
    return Model(config, params)


# ----------------------------------------------------------------------
# forward pass
# ----------------------------------------------------------------------
def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _layer_norm(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    y = (x - mu) * inv
    return y, inv


def _layer_norm_backward(dy: np.ndarray, y: np.ndarray, inv: np.ndarray) -> np.ndarray:
    m1 = dy.mean(axis=-1, keepdims=True)
    m2 = (dy * y).mean(axis=-1, keepdims=True)
    return inv * (dy - m1 - y * m2)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def _forward(model: Model, ids: Sequence[int]) -> tuple[np.ndarray, dict]:
    cfg = model.config
    p = model.params
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("ids must be a non-empty 1-D sequence")
    if ids.size > cfg.max_seq_len:
        raise ValueError(f"sequence length {ids.size} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError("token id out of vocabulary range")

    t = ids.size
    scale = 1.0 / math.sqrt(cfg.d_model // cfg.n_heads)
    mask = np.triu(np.full((t, t), -np.inf), k=1)

    x = p["embed"][ids] + _positional_encoding(cfg.max_seq_len, cfg.d_model)[:t]
    cache: dict = {"ids": ids, "layers": []}
    for i in range(cfg.n_layers):
        h1, inv1 = _layer_norm(x)
        uq = h1 @ p[f"l{i}.wq.lora_a"]
        q = h1 @ p[f"l{i}.wq"] + cfg.lora_scale * (uq @ p[f"l{i}.wq.lora_b"])
        k = h1 @ p[f"l{i}.wk"]
        uv = h1 @ p[f"l{i}.wv.lora_a"]
        v = h1 @ p[f"l{i}.wv"] + cfg.lora_scale * (uv @ p[f"l{i}.wv.lora_b"])
        qh, kh, vh = (_split_heads(m, cfg.n_heads) for m in (q, k, v))
        attn = _softmax(qh @ kh.transpose(0, 2, 1) * scale + mask[None])
        ctx = _merge_heads(attn @ vh)
        x1 = x + ctx @ p[f"l{i}.wo"]

        h2, inv2 = _layer_norm(x1)
        a = h2 @ p[f"l{i}.w1"]
        g = _gelu(a)
        x2 = x1 + g @ p[f"l{i}.w2"]

        cache["layers"].append(
            dict(h1=h1, inv1=inv1, uq=uq, uv=uv, qh=qh, kh=kh, vh=vh,
                 attn=attn, ctx=ctx, h2=h2, inv2=inv2, a=a, g=g)
        )
        x = x2
    hf, invf = _layer_norm(x)
    cache["hf"], cache["invf"] = hf, invf
    logits = hf @ p["head"]
    return logits, cache


def forward(model: Model, ids: Sequence[int]) -> np.ndarray:
    """Logits of shape ``(len(ids), vocab_size)``; row t conditions on ids[:t+1]."""
    return _forward(model, ids)[0]


# ----------------------------------------------------------------------
# backward pass
# ----------------------------------------------------------------------
def _backward(model: Model, cache: dict, d_logits: np.ndarray) -> dict[str, np.ndarray]:
    cfg = model.config
    p = model.params
    s = cfg.lora_scale
    head_scale = 1.0 / math.sqrt(cfg.d_model // cfg.n_heads)
    grads = {name: np.zeros_like(p[name]) for name in Model(cfg, p).trainable_names()}

    d_hf = d_logits @ p["head"].T
    dx = _layer_norm_backward(d_hf, cache["hf"], cache["invf"])
    for i in reversed(range(cfg.n_layers)):
        c = cache["layers"][i]
        # MLP block
        d_g = dx @ p[f"l{i}.w2"].T
        d_a = d_g * _gelu_grad(c["a"])
        d_h2 = d_a @ p[f"l{i}.w1"].T
        dx1 = dx + _layer_norm_backward(d_h2, c["h2"], c["inv2"])
        # attention block
        d_ctx = _split_heads(dx1 @ p[f"l{i}.wo"].T, cfg.n_heads)
        d_attn = d_ctx @ c["vh"].transpose(0, 2, 1)
        d_vh = c["attn"].transpose(0, 2, 1) @ d_ctx
        d_scores = c["attn"] * (d_attn - (d_attn * c["attn"]).sum(-1, keepdims=True))
        d_qh = d_scores @ c["kh"] * head_scale
        d_kh = d_scores.transpose(0, 2, 1) @ c["qh"] * head_scale
        d_q, d_k, d_v = (_merge_heads(m) for m in (d_qh, d_kh, d_vh))

        grads[f"l{i}.wq.lora_b"] += s * c["uq"].T @ d_q
        grads[f"l{i}.wv.lora_b"] += s * c["uv"].T @ d_v
        d_q_b = d_q @ p[f"l{i}.wq.lora_b"].T
        d_v_b = d_v @ p[f"l{i}.wv.lora_b"].T
        grads[f"l{i}.wq.lora_a"] += s * c["h1"].T @ d_q_b
        grads[f"l{i}.wv.lora_a"] += s * c["h1"].T @ d_v_b

        d_h1 = (
            d_q @ p[f"l{i}.wq"].T
            + s * d_q_b @ p[f"l{i}.wq.lora_a"].T
            + d_k @ p[f"l{i}.wk"].T
            + d_v @ p[f"l{i}.wv"].T
            + s * d_v_b @ p[f"l{i}.wv.lora_a"].T
        )
        dx = dx1 + _layer_norm_backward(d_h1, c["h1"], c["inv1"])

    d_embed = grads["embed"]
    np.add.at(d_embed, cache["ids"], dx)
    d_embed[: cfg.haptic_start] = 0.0
    d_embed[cfg.haptic_end :] = 0.0
    return grads


def _check_span(span: tuple[int, int], n: int) -> tuple[int, int]:
    a, b = span
    if not 1 <= a < b <= n:
        raise ValueError(f"span {span} invalid for sequence of length {n} (need 1 <= a < b <= n)")
    return a, b


def _scored_rows(logits: np.ndarray, ids: np.ndarray, span: tuple[int, int]):
    """Rows of ``logits`` that predict the span tokens, and those targets."""
    a, b = _check_span(span, len(ids))
    return logits[a - 1 : b - 1], ids[a:b]


def cross_entropy(model: Model, ids: Sequence[int], span: tuple[int, int]) -> float:
    """Mean negative log-likelihood of the span tokens given their prefixes."""
    logits, cache = _forward(model, ids)
    rows, targets = _scored_rows(logits, cache["ids"], span)
    logp = rows - _log_sum_exp(rows)
    return float(-logp[np.arange(len(targets)), targets].mean())


def _log_sum_exp(rows: np.ndarray) -> np.ndarray:
    m = rows.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(rows - m).sum(axis=-1, keepdims=True))


def loss_and_grads(
    model: Model, ids: Sequence[int], span: tuple[int, int]
) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy over the span and its gradient for trainable params."""
    logits, cache = _forward(model, ids)
    a, b = _check_span(span, len(cache["ids"]))
    rows, targets = _scored_rows(logits, cache["ids"], (a, b))
    probs = _softmax(rows)
    n = len(targets)
    loss = float(-np.log(probs[np.arange(n), targets]).mean())
    d_logits = np.zeros_like(logits)
    d_rows = probs.copy()
    d_rows[np.arange(n), targets] -= 1.0
    d_logits[a - 1 : b - 1] = d_rows / n
    return loss, _backward(model, cache, d_logits)


def sequence_logprob(model: Model, ids: Sequence[int], span: tuple[int, int]) -> float:
    """Total log-probability of the span tokens given their prefixes."""
    logits, cache = _forward(model, ids)
    rows, targets = _scored_rows(logits, cache["ids"], span)
    logp = rows - _log_sum_exp(rows)
    return float(logp[np.arange(len(targets)), targets].sum())


def logprob_and_grads(
    model: Model, ids: Sequence[int], span: tuple[int, int]
) -> tuple[float, dict[str, np.ndarray]]:
    """Span log-probability and its gradient for trainable params."""
    logits, cache = _forward(model, ids)
    a, b = _check_span(span, len(cache["ids"]))
    rows, targets = _scored_rows(logits, cache["ids"], (a, b))
    probs = _softmax(rows)
    n = len(targets)
    logp = float(np.log(probs[np.arange(n), targets]).sum())
    d_logits = np.zeros_like(logits)
    d_rows = -probs
    d_rows[np.arange(n), targets] += 1.0
    d_logits[a - 1 : b - 1] = d_rows
    return logp, _backward(model, cache, d_logits)


# ----------------------------------------------------------------------
# optimization
# ----------------------------------------------------------------------
class MomentumSGD:
    """SGD with classical momentum over a fixed set of parameter names."""

    def __init__(self, names: Iterable[str], lr: float, momentum: float = 0.9) -> None:
        if lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        self.names = list(names)
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, model: Model, grads: dict[str, np.ndarray]) -> None:
        for name in self.names:
            g = grads[name]
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            model.params[name] -= self.lr * v


def train_sft(
    model: Model,
    samples: Sequence[tuple[Sequence[int], tuple[int, int]]],
    epochs: int = 10,
    batch_size: int = 4,
    lr: float = 3e-4,
    momentum: float = 0.9,
    seed: int = 0,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[Model, list[float]]:
    """Supervised fine-tuning on ``(ids, caption_span)`` pairs.

    Gradients are averaged over each batch; samples are reshuffled every
    epoch.  Returns the model and the mean loss per epoch.  Raises if the
    loss stops being finite.
    """
    if not samples:
        raise ValueError("no training samples")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    opt = MomentumSGD(model.trainable_names(), lr=lr, momentum=momentum)
    rng = np.random.default_rng(seed)
    history: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        losses = []
        for lo in range(0, len(order), batch_size):
            batch = order[lo : lo + batch_size]
            acc: dict[str, np.ndarray] | None = None
            for idx in batch:
                ids, span = samples[idx]
                loss, grads = loss_and_grads(model, ids, span)
                losses.append(loss)
                if acc is None:
                    acc = grads
                else:
                    for name, g in grads.items():
                        acc[name] += g
            assert acc is not None
            for name in acc:
                acc[name] /= len(batch)
            opt.step(model, acc)
        mean_loss = float(np.mean(losses))
        if not math.isfinite(mean_loss):
            raise RuntimeError(f"training diverged at epoch {epoch}: loss {mean_loss}")
        history.append(mean_loss)
        if progress is not None:
            progress(epoch, mean_loss)
    return model, history


# ----------------------------------------------------------------------
# generation and adapter merging
# ----------------------------------------------------------------------
def generate(
    model: Model,
    prompt_ids: Sequence[int],
    max_new_tokens: int = 64,
    temperature: float = 0.0,
    seed: int = 0,
    stop_id: int | None = None,
    allowed_ids: Sequence[int] | None = None,
) -> list[int]:
    """Continue a prompt; returns only the newly generated ids.

    ``temperature == 0`` decodes greedily; larger values sample from the
    softmax at that temperature.  ``allowed_ids`` restricts the output
    alphabet (e.g. to text tokens).  Generation stops at ``stop_id`` —
    which is emitted — or after ``max_new_tokens``.
    """
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be >= 1")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    rng = np.random.default_rng(seed)
    disallowed = None
    if allowed_ids is not None:
        allow = np.zeros(model.config.vocab_size, dtype=bool)
        allow[np.asarray(list(allowed_ids), dtype=np.int64)] = True
        if not allow.any():
            raise ValueError("allowed_ids must be non-empty")
        disallowed = ~allow
    ids = [int(i) for i in prompt_ids]
    out: list[int] = []
    for _ in range(max_new_tokens):
        if len(ids) >= model.config.max_seq_len:
            break
        logits = forward(model, ids)[-1].copy()
        if disallowed is not None:
            logits[disallowed] = -np.inf
        if temperature == 0.0:
            nxt = int(np.argmax(logits))
        else:
            probs = _softmax(logits[None] / temperature)[0]
            nxt = int(rng.choice(model.config.vocab_size, p=probs))
        ids.append(nxt)
        out.append(nxt)
        if stop_id is not None and nxt == stop_id:
            break
    return out


def merge_adapters(model: Model) -> Model:
    """Fold every adapter into its base weight and reset the adapter to zero."""
    cfg = model.config
    for i in range(cfg.n_layers):
        for w in ("wq", "wv"):
            a = model.params[f"l{i}.{w}.lora_a"]
            b = model.params[f"l{i}.{w}.lora_b"]
            model.params[f"l{i}.{w}"] += cfg.lora_scale * (a @ b)
            a[:] = 0.0
            b[:] = 0.0
    return model


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------
def save_model(model: Model, path: str, extra: dict | None = None) -> None:
    """Write config and all parameters to an ``.npz`` checkpoint.

    ``extra`` is an optional JSON-serializable mapping for pipeline
    metadata (e.g. which tokenizer produced the haptic block); read it
    back with :func:`load_checkpoint_extra`.
    """
    np.savez(
        path,
        version=np.int64(_FORMAT_VERSION),
        config=json.dumps(asdict(model.config)),
        extra=json.dumps(extra or {}),
        **{f"param.{k}": v for k, v in model.params.items()},
    )


def load_model(path: str) -> Model:
    """Restore a checkpoint written by :func:`save_model`, bit-exact."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        config = ModelConfig(**json.loads(str(data["config"])))
        params = {
            key[len("param.") :]: data[key]
            for key in data.files
            if key.startswith("param.")
        }
    model = Model(config, params)
    expected = set(init_model(config).params)
    if set(params) != expected:
        raise ValueError("checkpoint parameter names do not match the config")
    return model


def load_checkpoint_extra(path: str) -> dict:
    """Read the metadata mapping stored alongside a checkpoint."""
    with np.load(path, allow_pickle=False) as data:
        if "extra" not in data.files:
            return {}
        return json.loads(str(data["extra"]))
