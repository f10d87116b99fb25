"""SleepNet: residual BiLSTM positional encoder, self-attention, 1D ResNet, linear head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .numcore import ops
from .numcore.nn import BatchNorm1d, BiLSTM, Conv1d, LayerNorm, Linear, Module
from .numcore.tensor import Tensor, count_macs, mac_tag, no_grad

EPOCH_SAMPLES = 1000
N_CLASSES = 6
COMPONENTS = ("encoder", "attention", "resnet", "head")


def default_channels(blocks: int, width: int = 64) -> tuple[int, ...]:
    """Block output widths: ``width`` for the first block, ``2 * width`` after."""
    return tuple(width if i == 0 else 2 * width for i in range(blocks))


@dataclass(frozen=True)
class SleepNetConfig:
    frame_size: int = 10
    d_model: int = 64
    lstm_layers: int = 1
    heads: int = 4
    resnet_blocks: int = 3
    resnet_channels: tuple[int, ...] = (64, 128, 128)
    # width of the first conv in each block; None means equal to the block output
    resnet_inner: tuple[int, ...] | None = None
    classes: int = N_CLASSES
    dropout: float = 0.1
    input_length: int = EPOCH_SAMPLES
    # False drops the positional encoder and attention (ResNet-only ablation)
    encoder_attention: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "resnet_channels", tuple(int(c) for c in self.resnet_channels))
        if self.resnet_inner is not None:
            object.__setattr__(self, "resnet_inner", tuple(int(c) for c in self.resnet_inner))
        self.validate()

    def validate(self) -> None:
        if self.frame_size < 1 or self.input_length % self.frame_size:
            raise ValueError(f"input length {self.input_length} not divisible by frame_size {self.frame_size}")
        if self.d_model < 2 or self.d_model % 2:
            raise ValueError("d_model must be even (BiLSTM halves it per direction)")
        if self.heads < 1 or self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.lstm_layers < 1:
            raise ValueError("lstm_layers must be >= 1")
        if self.resnet_blocks < 0 or len(self.resnet_channels) != self.resnet_blocks:
            raise ValueError("resnet_channels must list one width per block")
        if self.resnet_inner is not None and len(self.resnet_inner) != self.resnet_blocks:
            raise ValueError("resnet_inner must list one width per block")
        if any(c < 1 for c in self.resnet_channels + (self.resnet_inner or ())):
            raise ValueError("channel counts must be positive")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not self.encoder_attention and not self.resnet_blocks:
            raise ValueError("a model needs the encoder/attention stage, ResNet blocks, or both")

    @property
    def seq_len(self) -> int:
        return self.input_length // self.frame_size

    @property
    def inner(self) -> tuple[int, ...]:
        return self.resnet_inner if self.resnet_inner is not None else self.resnet_channels

    @property
    def resnet_input_channels(self) -> int:
        return self.d_model if self.encoder_attention else self.frame_size

    @property
    def feature_dim(self) -> int:
        return self.resnet_channels[-1] if self.resnet_blocks else self.d_model

    def block_strides(self) -> tuple[int, ...]:
        return tuple(1 if i == 0 else 2 for i in range(self.resnet_blocks))

    def to_text(self) -> str:
        """Canonical ``key=value`` lines, keys sorted."""
        lines = []
        for k, v in sorted(asdict(self).items()):
            if isinstance(v, (tuple, list)):
                v = ",".join(str(c) for c in v)
            elif v is None:
                v = "none"
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SleepNetConfig":
        kw: dict = {}
        for line in text.strip().splitlines():
            key, _, val = line.partition("=")
            kw[key.strip()] = val.strip()
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(kw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        out: dict = {}
        for k, v in kw.items():
            if k in ("resnet_channels", "resnet_inner"):
                out[k] = None if v == "none" else tuple(int(c) for c in v.split(",") if c)
            elif k == "dropout":
                out[k] = float(v)
            elif k == "encoder_attention":
                if v not in ("True", "False"):
                    raise ValueError(f"encoder_attention must be True or False, got {v!r}")
                out[k] = v == "True"
            else:
                out[k] = int(v)
        return cls(**out)

    def with_(self, **changes) -> "SleepNetConfig":
        return replace(self, **changes)


# -- layers -------------------------------------------------------------------------

class PositionalEncoder(Module):
    """``proj(frame_t) + BiLSTM(frames)_t``: a learned, residual position encoding."""

    def __init__(self, cfg: SleepNetConfig, rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(cfg.frame_size, cfg.d_model, rng)
        self.bilstm = BiLSTM(cfg.frame_size, cfg.d_model // 2, cfg.lstm_layers, rng)

    def forward(self, frames: Tensor) -> Tensor:
        return self.proj(frames) + self.bilstm(frames)


class SelfAttention(Module):
    """Multi-head scaled dot-product self-attention with residual + layer norm."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.heads = heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.norm = LayerNorm(d_model)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, T, D = x.shape
        return x.reshape(B, T, self.heads, D // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, drop=None) -> Tensor:
        B, T, D = x.shape
        dk = D // self.heads
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = ops.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
        weights = ops.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = ops.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, T, D)
        y = self.out(ctx)
        if drop is not None:
            y = drop(y)
        return self.norm(x + y)


class ResBlock(Module):
    def __init__(self, c_in: int, c_inner: int, c_out: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv1d(c_in, c_inner, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm1d(c_inner)
        self.conv2 = Conv1d(c_inner, c_out, 3, rng, padding=1)
        self.bn2 = BatchNorm1d(c_out)
        if stride != 1 or c_in != c_out:
            self.skip_conv = Conv1d(c_in, c_out, 1, rng, stride=stride)
            self.skip_bn = BatchNorm1d(c_out)
        else:
            self.skip_conv = None
            self.skip_bn = None

    @property
    def projected(self) -> bool:
        return self.skip_conv is not None

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = self.skip_bn(self.skip_conv(x)) if self.projected else x
        return ops.relu(h + skip)


class ResNet1d(Module):
    def __init__(self, cfg: SleepNetConfig, rng: np.random.Generator):
        super().__init__()
        self.blocks = []
        c_in = cfg.resnet_input_channels
        for c_inner, c_out, stride in zip(cfg.inner, cfg.resnet_channels, cfg.block_strides()):
            self.blocks.append(ResBlock(c_in, c_inner, c_out, stride, rng))
            c_in = c_out

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return ops.global_average_pool(x)


class SleepNet(Module):
    """The full classifier. Input: (B, input_length) Z-scored epochs. Output: (B, classes) logits."""

    def __init__(self, config: SleepNetConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config or SleepNetConfig()
        rng = np.random.default_rng(seed)
        cfg = self.config
        if cfg.encoder_attention:
            self.encoder = PositionalEncoder(cfg, rng)
            self.attention = SelfAttention(cfg.d_model, cfg.heads, rng)
        else:
            self.encoder = self.attention = None
        self.resnet = ResNet1d(cfg, rng)
        self.head = Linear(cfg.feature_dim, cfg.classes, rng)
        self.dropout_rng: np.random.Generator | None = None

    def _drop(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.config.dropout, self.dropout_rng, self.training)

    def frame(self, x: Tensor) -> Tensor:
        """(B, L) -> (B, T, frame_size) non-overlapping frames."""
        B, L = x.shape
        if L != self.config.input_length:
            raise ValueError(f"expected input length {self.config.input_length}, got {L}")
        return x.reshape(B, self.config.seq_len, self.config.frame_size)

    def features(self, x) -> Tensor:
        """Pooled ResNet output (penultimate layer)."""
        x = _as_batch(x, self.head.weight.dtype)
        h = self.frame(x)
        if self.encoder is not None:
            with mac_tag("encoder"):
                h = self._drop(self.encoder(h))
            with mac_tag("attention"):
                h = self.attention(h, self._drop)
        with mac_tag("resnet"):
            return self.resnet(h.transpose(0, 2, 1))

    def forward(self, x) -> Tensor:
        f = self.features(x)
        with mac_tag("head"):
            return self.head(f)

    def predict_proba(self, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
        was = self.training
        self.eval()
        out = []
        with no_grad():
            for i in range(0, len(x), batch_size):
                out.append(ops.softmax_array(self.forward(x[i : i + batch_size]).data.astype(np.float64)))
        self.train(was)
        return np.concatenate(out) if out else np.zeros((0, self.config.classes))


def _as_batch(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        t = x
    else:
        t = Tensor(np.asarray(x, dtype=dtype))
    if t.ndim == 1:
        t = t.reshape(1, -1)
    return t


# -- FLOPs -------------------------------------------------------------------------------

def conv1d_flops(c_in: int, c_out: int, kernel: int, length: int, stride: int = 1, padding: int = 0) -> int:
    """2 x multiply-accumulates of one conv1d on a single sample; bias excluded."""
    l_out = (length + 2 * padding - kernel) // stride + 1
    return 2 * c_in * c_out * kernel * l_out


def count_flops(config: SleepNetConfig) -> dict[str, int]:
    """Analytic forward FLOPs per component for one input epoch.

    Convention: FLOPs = 2 x multiply-accumulates of matrix products and
    convolutions. Biases, normalisations, activations, softmax and the
    elementwise LSTM gate arithmetic are excluded.
    """
    T, D = config.seq_len, config.d_model
    H = D // 2
    enc = T * config.frame_size * D
    size = config.frame_size
    for _ in range(config.lstm_layers):
        enc += 2 * (T * size * 4 * H + T * H * 4 * H)
        size = 2 * H
    attn = 4 * T * D * D + 2 * T * T * D
    if not config.encoder_attention:
        enc = attn = 0
    res = 0
    length, c_in = T, config.resnet_input_channels
    for c_inner, c_out, stride in zip(config.inner, config.resnet_channels, config.block_strides()):
        res += conv1d_flops(c_in, c_inner, 3, length, stride, 1) // 2
        l_out = (length + 2 - 3) // stride + 1
        res += conv1d_flops(c_inner, c_out, 3, l_out, 1, 1) // 2
        if stride != 1 or c_in != c_out:
            res += conv1d_flops(c_in, c_out, 1, length, stride, 0) // 2
        length, c_in = l_out, c_out
    head = config.feature_dim * config.classes
    out = {"encoder": 2 * enc, "attention": 2 * attn, "resnet": 2 * res, "head": 2 * head}
    out["total"] = sum(out.values())
    return out


def measure_flops(model: SleepNet) -> dict[str, int]:
    """Run one inference forward pass under the multiply counter."""
    was = model.training
    model.eval()
    x = np.zeros((1, model.config.input_length), dtype=model.parameters()[0].dtype)
    with no_grad(), count_macs() as counter:
        model(x)
    model.train(was)
    out = {k: 2 * counter.by_tag.get(k, 0) for k in COMPONENTS}
    out["total"] = 2 * counter.total
    return out


def ablation_config(kind: str, base: SleepNetConfig | None = None) -> SleepNetConfig:
    """Single-branch variants of ``base``: ``"transformer"`` (no ResNet) or ``"resnet"`` (no encoder/attention)."""
    base = base or SleepNetConfig()
    if kind == "full":
        return base
    if kind == "transformer":
        return base.with_(resnet_blocks=0, resnet_channels=(), resnet_inner=None, encoder_attention=True)
    if kind == "resnet":
        return base.with_(encoder_attention=False)
    raise ValueError(f"unknown ablation {kind!r}; expected full, transformer or resnet")


def parameter_count(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))
