"""The fused LGSTime forecaster, its ablations and the reconstructed baselines.

All variants share a learned linear embedding of the raw features to
``d_model``.  Enabled streams read the embedded sequence in parallel; their
last-position summaries are concatenated and mapped by a linear head to
``pred_len x n_features`` outputs.

=========  =================================
variant    streams
=========  =================================
lgstime    LSTM, GRU, sparse attention
lstm_gru   LSTM, GRU
lstm       LSTM
gru        GRU
rnn        vanilla tanh RNN
cnn        kernel-3 conv + tanh, time average
=========  =================================
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attention import AttentionParams, multi_head_forward
from .errors import DimensionError, ValidationError
from .recurrent import GruParams, LstmParams, RnnParams, gru_forward, lstm_forward, rnn_forward, uniform_init
from .tensor import Tensor, add_bias, concat, conv1d, getitem, matmul, mean, parameter, reshape, tanh

VARIANTS = ("lgstime", "lstm_gru", "lstm", "gru", "rnn", "cnn")
STREAMS = {
    "lgstime": ("lstm", "gru", "attn"),
    "lstm_gru": ("lstm", "gru"),
    "lstm": ("lstm",),
    "gru": ("gru",),
    "rnn": ("rnn",),
    "cnn": ("cnn",),
}
# Fixed per-group RNG stream ids: a group initialises identically in every variant.
_GROUP_SEED = {"embed": 0, "lstm": 1, "gru": 2, "attn": 3, "rnn": 4, "cnn": 5, "head": 6}
CONV_KERNEL = 3


@dataclass(frozen=True)
class ModelConfig:
    n_features: int = 12
    input_len: int = 96
    pred_len: int = 1
    hidden: int = 64
    d_model: int = 64
    heads: int = 4
    sparse_factor: int = 8
    variant: str = "lgstime"

    def __post_init__(self):
        for name in ("n_features", "input_len", "pred_len", "hidden", "d_model", "heads"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if self.sparse_factor < 0:
            raise ValidationError(f"sparse_factor must be >= 0, got {self.sparse_factor}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d_model % self.heads:
            raise ValidationError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.variant == "lgstime" and self.hidden != self.d_model:
            raise ValidationError("lgstime fuses equal-width streams: hidden must equal d_model")

    @property
    def streams(self) -> tuple[str, ...]:
        return STREAMS[self.variant]

    @property
    def fusion_width(self) -> int:
        return sum(self.d_model if s == "attn" else self.hidden for s in self.streams)

    @property
    def out_width(self) -> int:
        return self.pred_len * self.n_features

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    embed_W: Tensor
    embed_b: Tensor
    head_W: Tensor
    head_b: Tensor
    lstm: LstmParams | None = None
    gru: GruParams | None = None
    rnn: RnnParams | None = None
    attn: AttentionParams | None = None
    conv_W: Tensor | None = None
    conv_b: Tensor | None = None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("embed.W", self.embed_W), ("embed.b", self.embed_b)]
        for group in ("lstm", "gru", "rnn", "attn"):
            p = getattr(self, group)
            if p is not None:
                out += [(f"{group}.{k}", v) for k, v in p.parameters().items()]
        if self.conv_W is not None:
            out += [("conv.W", self.conv_W), ("conv.b", self.conv_b)]
        out += [("head.W", self.head_W), ("head.b", self.head_b)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def _linear(rng: np.random.Generator, n_in: int, n_out: int) -> tuple[Tensor, Tensor]:
    return parameter(uniform_init(rng, (n_in, n_out), n_in)), parameter(np.zeros(n_out))


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""

    def rng(group):
        return np.random.default_rng([seed, _GROUP_SEED[group]])

    d, hid = cfg.d_model, cfg.hidden
    embed_W, embed_b = _linear(rng("embed"), cfg.n_features, d)
    head_W, head_b = _linear(rng("head"), cfg.fusion_width, cfg.out_width)
    p = ModelParams(embed_W, embed_b, head_W, head_b)
    for s in cfg.streams:
        if s == "lstm":
            p.lstm = LstmParams.init(d, hid, rng("lstm"))
        elif s == "gru":
            p.gru = GruParams.init(d, hid, rng("gru"))
        elif s == "rnn":
            p.rnn = RnnParams.init(d, hid, rng("rnn"))
        elif s == "attn":
            p.attn = AttentionParams.init(d, cfg.heads, rng("attn"))
        elif s == "cnn":
            fan_in = CONV_KERNEL * d
            p.conv_W = parameter(uniform_init(rng("cnn"), (CONV_KERNEL, d, hid), fan_in))
            p.conv_b = parameter(np.zeros(hid))
    return p


def zero_params(cfg: ModelConfig) -> ModelParams:
    p = init_params(cfg, 0)
    for _, t in p.named_parameters():
        t.data = np.zeros_like(t.data)
    return p


def count_parameters(params) -> int:
    """Number of trainable scalars in a parameter container or tensor."""
    if isinstance(params, Tensor):
        return params.size
    if isinstance(params, ModelParams):
        return sum(t.size for t in params.parameters())
    if isinstance(params, dict):
        return sum(count_parameters(v) for v in params.values())
    if hasattr(params, "parameters"):
        return count_parameters(params.parameters())
    return sum(count_parameters(v) for v in params)


def _check_params(params: ModelParams, cfg: ModelConfig) -> None:
    if params.embed_W.shape != (cfg.n_features, cfg.d_model):
        raise DimensionError(f"embedding {params.embed_W.shape} does not match config")
    if params.head_W.shape != (cfg.fusion_width, cfg.out_width):
        raise DimensionError(
            f"head {params.head_W.shape} does not match ({cfg.fusion_width}, {cfg.out_width})"
        )
    for s in cfg.streams:
        if (s == "cnn" and params.conv_W is None) or (s != "cnn" and getattr(params, s) is None):
            raise DimensionError(f"variant {cfg.variant} needs the {s} parameters")


def embed_steps(params: ModelParams, X: Tensor) -> list[Tensor]:
    """Embedded rows per time step, each (batch, d_model)."""
    return [add_bias(matmul(getitem(X, (slice(None), t, slice(None))), params.embed_W), params.embed_b)
            for t in range(X.shape[1])]


def stream_features(params: ModelParams, cfg: ModelConfig, X: Tensor) -> dict[str, Tensor]:
    """Last-position summary of each enabled stream, each (batch, width)."""
    feats = {}
    steps = None
    if {"lstm", "gru", "rnn"} & set(cfg.streams):
        steps = embed_steps(params, X)
    for s in cfg.streams:
        if s == "lstm":
            feats[s] = lstm_forward(params.lstm, steps)[-1].h
        elif s == "gru":
            feats[s] = gru_forward(params.gru, steps)[-1].h
        elif s == "rnn":
            feats[s] = rnn_forward(params.rnn, steps)[-1]
        elif s == "attn":
            E = add_bias(matmul(X, params.embed_W), params.embed_b)
            A = multi_head_forward(params.attn, E, cfg.sparse_factor)
            feats[s] = getitem(A, (slice(None), -1, slice(None)))
        elif s == "cnn":
            E = add_bias(matmul(X, params.embed_W), params.embed_b)
            C = tanh(add_bias(conv1d(E, params.conv_W), params.conv_b))
            feats[s] = mean(C, axis=1)
    return feats


def head(params: ModelParams, cfg: ModelConfig, feats: list[Tensor]) -> Tensor:
    z = concat(feats) if len(feats) > 1 else feats[0]
    out = add_bias(matmul(z, params.head_W), params.head_b)
    return reshape(out, (z.shape[0], cfg.pred_len, cfg.n_features))


def forward(params: ModelParams, cfg: ModelConfig, X) -> Tensor:
    """Forecast from ``X`` of shape (input_len, n_features) or (batch, input_len, n_features)."""
    if not isinstance(X, Tensor):
        X = Tensor(X)
    single = X.ndim == 2
    if single:
        X = Tensor._wrap(X.data[None]) if not X.requires_grad else reshape(X, (1,) + X.shape)
    if X.ndim != 3 or X.shape[1:] != (cfg.input_len, cfg.n_features):
        raise DimensionError(
            f"input {X.shape} does not match (batch, {cfg.input_len}, {cfg.n_features})"
        )
    _check_params(params, cfg)
    feats = stream_features(params, cfg, X)
    out = head(params, cfg, [feats[s] for s in cfg.streams])
    if single:
        out = reshape(out, (cfg.pred_len, cfg.n_features))
    return out


def baseline_forward(params: ModelParams, cfg: ModelConfig, X) -> Tensor:
    if cfg.variant not in ("rnn", "cnn", "gru"):
        raise ValidationError(f"{cfg.variant!r} is not a baseline variant")
    return forward(params, cfg, X)


@dataclass
class LGSTime:
    """A configuration bound to its parameters."""

    config: ModelConfig = field(default_factory=ModelConfig)
    params: ModelParams | None = None
    seed: int = 0

    def __post_init__(self):
        if self.params is None:
            self.params = init_params(self.config, self.seed)

    def __call__(self, X) -> Tensor:
        return forward(self.params, self.config, X)

    def predict(self, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            return forward(self.params, self.config, X).data
        chunks = [forward(self.params, self.config, X[i:i + batch_size]).data
                  for i in range(0, len(X), batch_size)]
        return np.concatenate(chunks)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return self.params.named_parameters()

    def parameters(self) -> list[Tensor]:
        return self.params.parameters()

    def num_parameters(self) -> int:
        return count_parameters(self.params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        mine = dict(self.named_parameters())
        if set(mine) != set(state):
            raise ValidationError(f"parameter names differ: {sorted(set(mine) ^ set(state))}")
        for k, t in mine.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionError(f"{k}: stored {arr.shape}, expected {t.shape}")
            t.data = arr.copy()


# -- checkpoint file --------------------------------------------------------
# magic | u32 version | u64 header length | JSON header | raw little-endian f64
_MAGIC = b"LGSTCKPT"
_VERSION = 1


def save_checkpoint(path, model: LGSTime) -> None:
    tensors, offset, blobs = [], 0, []
    for name, t in model.named_parameters():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": model.config.to_dict(), "tensors": tensors},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<IQ", _VERSION, len(header)) + header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> LGSTime:
    buf = Path(path).read_bytes()
    if buf[:8] != _MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", buf, 8)
    if version != _VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(buf[start:start + hlen])
    body = memoryview(buf)[start + hlen:]
    cfg = ModelConfig.from_dict(header["config"])
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=entry["offset"])
        state[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    model = LGSTime(cfg)
    model.load_state_dict(state)
    return model
