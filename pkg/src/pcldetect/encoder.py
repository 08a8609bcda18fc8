"""Mini BERT-style bidirectional encoder trained from scratch.

Desk-scale stand-in for a large pre-trained encoder: learned token and
absolute position embeddings, post-norm self-attention blocks with GELU
feed-forward layers, and a tanh pooler over the leading ([CLS]) position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ContractError

MASK_BIAS = -1e9  # exp() of (score + bias - max) underflows to exactly 0.0

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    """Shape hyperparameters of the encoder."""

    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 6
    d_ff: int = 256
    max_len: int = 250
    dropout_rate: float = 0.4
    pad_id: int = 0

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")
        if min(self.d_model, self.n_heads, self.n_layers, self.d_ff) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.max_len < 3:
            raise ConfigError("max_len must allow [CLS], one token and [SEP]")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "d_ff": self.d_ff,
            "max_len": self.max_len,
            "dropout_rate": self.dropout_rate,
            "pad_id": self.pad_id,
        }


class EncoderParams:
    """Named weight tensors for the encoder plus its pooler.

    Names follow a fixed scheme ("embeddings.*", "layer.<i>.*", "pooler.*")
    that the optimizer's grouping and the checkpoint format key on.
    """

    def __init__(self, config: EncoderConfig, tensors: dict):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> "EncoderParams":
        """Fresh parameters: normal(0, 0.02) weights, zero biases, unit gains."""
        d, f = config.d_model, config.d_ff
        t = {}

        def w(name, shape):
            t[name] = Tensor(rng.normal(0.0, INIT_STD, size=shape), requires_grad=True)

        def z(name, shape):
            t[name] = Tensor(np.zeros(shape), requires_grad=True)

        def ones(name, shape):
            t[name] = Tensor(np.ones(shape), requires_grad=True)

        w("embeddings.token", (config.vocab_size, d))
        w("embeddings.position", (config.max_len, d))
        ones("embeddings.ln.gain", (d,))
        z("embeddings.ln.bias", (d,))
        for i in range(config.n_layers):
            for proj in ("q", "k", "v", "out"):
                w(f"layer.{i}.attn.{proj}.weight", (d, d))
                z(f"layer.{i}.attn.{proj}.bias", (d,))
            ones(f"layer.{i}.attn.ln.gain", (d,))
            z(f"layer.{i}.attn.ln.bias", (d,))
            w(f"layer.{i}.ff.in.weight", (d, f))
            z(f"layer.{i}.ff.in.bias", (f,))
            w(f"layer.{i}.ff.out.weight", (f, d))
            z(f"layer.{i}.ff.out.bias", (d,))
            ones(f"layer.{i}.ff.ln.gain", (d,))
            z(f"layer.{i}.ff.ln.bias", (d,))
        w("pooler.dense.weight", (d, d))
        z("pooler.dense.bias", (d,))
        return cls(config, t)


def _linear(x: Tensor, params: EncoderParams, name: str) -> Tensor:
    return ag.add(ag.matmul(x, params[f"{name}.weight"]), params[f"{name}.bias"])


def _attention(x, params, layer, mask_bias, cfg, train, rng, attn_sink):
    b, s, d = x.shape
    h, dh = cfg.n_heads, d // cfg.n_heads

    def split_heads(t):
        return ag.transpose(ag.reshape(t, (b, s, h, dh)), (0, 2, 1, 3))

    q = split_heads(_linear(x, params, f"layer.{layer}.attn.q"))
    k = split_heads(_linear(x, params, f"layer.{layer}.attn.k"))
    v = split_heads(_linear(x, params, f"layer.{layer}.attn.v"))
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    probs = ag.softmax(ag.add(scores, mask_bias))
    if attn_sink is not None:
        attn_sink.append(probs.values.copy())
    probs = ag.dropout(probs, cfg.dropout_rate, train, rng)
    ctx = ag.reshape(ag.transpose(ag.matmul(probs, v), (0, 2, 1, 3)), (b, s, d))
    return _linear(ctx, params, f"layer.{layer}.attn.out")


def encode_batch(
    params: EncoderParams,
    token_ids: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    attn_sink: list | None = None,
) -> Tensor:
    """Run the encoder over a padded (batch, seq) id matrix.

    Returns the last layer's representation at position 0 for each row.
    Padding positions are masked out of every attention step, so appended
    [PAD] ids cannot influence the result. When `attn_sink` is a list, the
    per-layer attention probability arrays are appended to it.
    """
    cfg = params.config
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ContractError(f"encode_batch expects a 2-d id matrix, got shape {ids.shape}")
    b, s = ids.shape
    if s > cfg.max_len:
        raise ContractError(
            f"sequence length {s} exceeds max_len {cfg.max_len}; truncate upstream"
        )
    if s < 1:
        raise ContractError("empty sequence")

    key_pad = ids == cfg.pad_id  # (b, s)
    mask_bias = ag.constant(
        np.where(key_pad, MASK_BIAS, 0.0)[:, None, None, :]
    )  # broadcast over heads and query positions

    emb = ag.add(
        ag.embedding_gather(params["embeddings.token"], ids),
        ag.embedding_gather(params["embeddings.position"], np.arange(s)),
    )
    x = ag.layer_norm(emb, params["embeddings.ln.gain"], params["embeddings.ln.bias"])
    x = ag.dropout(x, cfg.dropout_rate, train, rng)

    for layer in range(cfg.n_layers):
        attn = _attention(x, params, layer, mask_bias, cfg, train, rng, attn_sink)
        x = ag.layer_norm(
            ag.add(x, ag.dropout(attn, cfg.dropout_rate, train, rng)),
            params[f"layer.{layer}.attn.ln.gain"],
            params[f"layer.{layer}.attn.ln.bias"],
        )
        ff = ag.gelu(_linear(x, params, f"layer.{layer}.ff.in"))
        ff = _linear(ff, params, f"layer.{layer}.ff.out")
        x = ag.layer_norm(
            ag.add(x, ag.dropout(ff, cfg.dropout_rate, train, rng)),
            params[f"layer.{layer}.ff.ln.gain"],
            params[f"layer.{layer}.ff.ln.bias"],
        )

    return ag.select(x, 0, axis=1)  # (b, d_model) at the [CLS] position


def encode(
    params: EncoderParams,
    tokens,
    train: bool = False,
    rng: np.random.Generator | None = None,
    attn_sink: list | None = None,
) -> Tensor:
    """Encode one already-wrapped token id sequence into a (d_model,) vector."""
    ids = np.asarray(tokens, dtype=np.intp)
    if ids.ndim != 1:
        raise ContractError(f"encode expects a 1-d token sequence, got shape {ids.shape}")
    h = encode_batch(params, ids[None, :], train=train, rng=rng, attn_sink=attn_sink)
    return ag.select(h, 0, axis=0)


def pooler(h: Tensor, params: EncoderParams) -> Tensor:
    """Dense + tanh transform of the [CLS] representation; output in (-1, 1)."""
    return ag.tanh(_linear(h, params, "pooler.dense"))


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path,
    config: EncoderConfig,
    named_params: dict,
    optimizer_state: dict | None = None,
    meta: dict | None = None,
) -> None:
    """Write a bit-exact .npz dump of config, parameters and optimizer state.

    `named_params` maps name -> Tensor for every trainable parameter
    (encoder plus heads). Uncompressed npz keeps the file bytes a pure
    function of the content, so equal runs hash identically.
    """
    arrays = {f"param/{n}": t.values for n, t in named_params.items()}
    header = {
        "version": CHECKPOINT_VERSION,
        "encoder_config": config.to_dict(),
        "meta": meta or {},
    }
    if optimizer_state is not None:
        header["optimizer"] = {
            k: v for k, v in optimizer_state.items() if k not in ("m", "v")
        }
        for moment in ("m", "v"):
            for n, arr in optimizer_state[moment].items():
                arrays[f"opt/{moment}/{n}"] = arr
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Read a checkpoint; returns (config, named_params, optimizer_state, meta)."""
    with np.load(path) as data:
        header = json.loads(str(data["header"]))
        if header["version"] != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {header['version']}")
        config = EncoderConfig(**header["encoder_config"])
        params = {}
        moments = {"m": {}, "v": {}}
        for key in data.files:
            if key.startswith("param/"):
                params[key[len("param/"):]] = Tensor(data[key], requires_grad=True)
            elif key.startswith("opt/"):
                _, moment, name = key.split("/", 2)
                moments[moment][name] = np.array(data[key])
        opt_state = None
        if "optimizer" in header:
            opt_state = dict(header["optimizer"])
            opt_state["m"] = moments["m"]
            opt_state["v"] = moments["v"]
    return config, params, opt_state, header["meta"]
