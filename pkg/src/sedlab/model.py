"""Three-branch network in float64 numpy with hand-written gradients.

The shared encoder is three conv blocks (3x3 conv, batch norm, ReLU, mean
pooling over the frequency axis; the last block collapses frequency
entirely) and never pools time, so frame embeddings stay aligned with the
input frames.  The classification head pools frames per class with
softmax-over-time attention weights applied to sigmoid frame probabilities;
the projection head is a per-frame affine map with identity activation.

Backward passes are exact reverse-mode derivatives of this fixed graph.
Gradients accumulate into each layer's ``g*`` buffers; both heads'
gradients sum at the shared frame embeddings.  There is no general autodiff
here and none is intended.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

CHECKPOINT_MAGIC = b"SEDMDL01"


@dataclass
class ModelConfig:
    n_classes: int = 0  # 0 means "fill in from data later"
    n_freq_bins: int = 0
    channels: tuple[int, ...] = (16, 32, 64)
    freq_pools: tuple[int, ...] = (4, 4, 0)  # 0 collapses the remaining bins
    kernel_size: int = 3
    proj_dim: int = 64
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    @property
    def embed_dim(self) -> int:
        return self.channels[-1]

    def resolved(self, n_classes: int, n_freq_bins: int) -> "ModelConfig":
        return replace(self, n_classes=n_classes, n_freq_bins=n_freq_bins)


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv2d:
    """3x3 same-padding convolution over (N, C_in, T, F)."""

    def __init__(self, in_ch: int, out_ch: int, k: int, rng: np.random.Generator):
        self.k = k
        self.w = _xavier(rng, (out_ch, in_ch, k, k), in_ch * k * k, out_ch * k * k)
        self.b = np.zeros(out_ch)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c_in, t, f = x.shape
        k, pad = self.k, self.k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, Cin, T, F, k, k)
        cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(n * t * f, c_in * k * k)
        out = cols @ self.w.reshape(self.w.shape[0], -1).T + self.b
        self._cache = (cols, x.shape)
        return out.reshape(n, t, f, -1).transpose(0, 3, 1, 2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cols, (n, c_in, t, f) = self._cache
        k, pad = self.k, self.k // 2
        out_ch = self.w.shape[0]
        dyf = dy.transpose(0, 2, 3, 1).reshape(-1, out_ch)
        self.gw += (dyf.T @ cols).reshape(self.w.shape)
        self.gb += dyf.sum(axis=0)
        dcols = (dyf @ self.w.reshape(out_ch, -1)).reshape(n, t, f, c_in, k, k)
        dxp = np.zeros((n, c_in, t + 2 * pad, f + 2 * pad))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + t, j : j + f] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, pad : pad + t, pad : pad + f]

    def params(self):
        return {"weight": self.w, "bias": self.b}

    def grads(self):
        return {"weight": self.gw, "bias": self.gb}


class BatchNorm2d:
    """Per-channel batch norm over (batch, time, freq)."""

    def __init__(self, n_ch: int, eps: float, momentum: float):
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(n_ch)
        self.beta = np.zeros(n_ch)
        self.run_mean = np.zeros(n_ch)
        self.run_var = np.ones(n_ch)
        self.ggamma = np.zeros(n_ch)
        self.gbeta = np.zeros(n_ch)
        self._cache = None

    def forward(self, x: np.ndarray, train: bool, update_running: bool = True) -> np.ndarray:
        axes = (0, 2, 3)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if update_running:
                self.run_mean = self.momentum * self.run_mean + (1 - self.momentum) * mean
                self.run_var = self.momentum * self.run_var + (1 - self.momentum) * var
        else:
            mean, var = self.run_mean, self.run_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self._cache = (xhat, inv, train)
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv, train = self._cache
        axes = (0, 2, 3)
        self.ggamma += np.sum(dy * xhat, axis=axes)
        self.gbeta += np.sum(dy, axis=axes)
        g = self.gamma[None, :, None, None] * inv[None, :, None, None]
        if not train:
            return dy * g
        dxhat = dy * self.gamma[None, :, None, None]
        m1 = dxhat.mean(axis=axes)[None, :, None, None]
        m2 = (dxhat * xhat).mean(axis=axes)[None, :, None, None]
        return inv[None, :, None, None] * (dxhat - m1 - xhat * m2)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.ggamma, "beta": self.gbeta}

    def stats(self):
        return {"run_mean": self.run_mean, "run_var": self.run_var}


class FreqPool:
    """Mean pooling over frequency; factor 0 collapses the whole axis."""

    def __init__(self, factor: int):
        self.factor = factor
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, t, f = x.shape
        if self.factor == 0:
            self._cache = (f, f)
            return x.mean(axis=3, keepdims=True)
        width = self.factor
        f_used = (f // width) * width
        self._cache = (f, width)
        return x[:, :, :, :f_used].reshape(n, c, t, f_used // width, width).mean(axis=4)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        f, width = self._cache
        n, c, t, f_out = dy.shape
        dx = np.zeros((n, c, t, f))
        if self.factor == 0:
            dx += dy / f
            return dx
        expanded = np.repeat(dy / width, width, axis=3)
        dx[:, :, :, : f_out * width] = expanded
        return dx


class ConvBlock:
    def __init__(self, in_ch: int, out_ch: int, pool: int, cfg: ModelConfig, rng: np.random.Generator):
        self.conv = Conv2d(in_ch, out_ch, cfg.kernel_size, rng)
        self.bn = BatchNorm2d(out_ch, cfg.bn_eps, cfg.bn_momentum)
        self.pool = FreqPool(pool)
        self._relu_mask = None

    def forward(self, x: np.ndarray, train: bool, update_running: bool = True) -> np.ndarray:
        x = self.bn.forward(self.conv.forward(x), train, update_running)
        self._relu_mask = x > 0
        return self.pool.forward(x * self._relu_mask)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy = self.pool.backward(dy) * self._relu_mask
        return self.conv.backward(self.bn.backward(dy))


class Encoder:
    """Conv stack mapping (N, T, F) feature grids to (N, T, E) embeddings."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.blocks = []
        in_ch = 1
        for out_ch, pool in zip(cfg.channels, cfg.freq_pools):
            self.blocks.append(ConvBlock(in_ch, out_ch, pool, cfg, rng))
            in_ch = out_ch

    def forward(self, feats: np.ndarray, train: bool, update_running: bool = True) -> np.ndarray:
        if feats.ndim != 3 or feats.shape[1] == 0:
            raise ValueError(f"expected nonempty (N, T, F) features, got shape {feats.shape}")
        x = feats[:, None, :, :]
        for block in self.blocks:
            x = block.forward(x, train, update_running)
        if x.shape[3] != 1:
            raise ValueError(f"frequency axis not fully collapsed: residual {x.shape[3]} bins")
        return x[:, :, :, 0].transpose(0, 2, 1)

    def backward(self, d_emb: np.ndarray) -> None:
        dx = d_emb.transpose(0, 2, 1)[:, :, :, None]
        for block in reversed(self.blocks):
            dx = block.backward(dx)


class AttentionClassifier:
    """Frame sigmoid probabilities pooled per class by softmax-over-time."""

    def __init__(self, embed_dim: int, n_classes: int, rng: np.random.Generator):
        self.w_cls = _xavier(rng, (embed_dim, n_classes), embed_dim, n_classes)
        self.b_cls = np.zeros(n_classes)
        self.w_att = _xavier(rng, (embed_dim, n_classes), embed_dim, n_classes)
        self.b_att = np.zeros(n_classes)
        self.gw_cls = np.zeros_like(self.w_cls)
        self.gb_cls = np.zeros_like(self.b_cls)
        self.gw_att = np.zeros_like(self.w_att)
        self.gb_att = np.zeros_like(self.b_att)
        self._cache = None

    def forward(self, emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        probs = expit(emb @ self.w_cls + self.b_cls)  # (N, T, C)
        att = emb @ self.w_att + self.b_att
        att = att - att.max(axis=1, keepdims=True)
        e = np.exp(att)
        weights = e / e.sum(axis=1, keepdims=True)  # softmax over time, per class
        clip_probs = np.sum(weights * probs, axis=1)
        self._cache = (emb, probs, weights)
        return probs, clip_probs

    def backward(self, d_frame_probs: np.ndarray | None, d_clip_probs: np.ndarray | None) -> np.ndarray:
        emb, probs, weights = self._cache
        d_probs = np.zeros_like(probs)
        d_weights = np.zeros_like(weights)
        if d_frame_probs is not None:
            d_probs += d_frame_probs
        if d_clip_probs is not None:
            d_probs += weights * d_clip_probs[:, None, :]
            d_weights += probs * d_clip_probs[:, None, :]
        d_att = weights * (d_weights - np.sum(weights * d_weights, axis=1, keepdims=True))
        d_logits = d_probs * probs * (1.0 - probs)
        self.gw_cls += np.einsum("nte,ntc->ec", emb, d_logits)
        self.gb_cls += d_logits.sum(axis=(0, 1))
        self.gw_att += np.einsum("nte,ntc->ec", emb, d_att)
        self.gb_att += d_att.sum(axis=(0, 1))
        return d_logits @ self.w_cls.T + d_att @ self.w_att.T

    def params(self):
        return {"w_cls": self.w_cls, "b_cls": self.b_cls, "w_att": self.w_att, "b_att": self.b_att}

    def grads(self):
        return {"w_cls": self.gw_cls, "b_cls": self.gb_cls, "w_att": self.gw_att, "b_att": self.gb_att}


class Projection:
    """Per-frame affine map with identity activation."""

    def __init__(self, embed_dim: int, proj_dim: int, rng: np.random.Generator):
        self.w = _xavier(rng, (embed_dim, proj_dim), embed_dim, proj_dim)
        self.b = np.zeros(proj_dim)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def forward(self, emb: np.ndarray) -> np.ndarray:
        self._cache = emb
        return emb @ self.w + self.b

    def backward(self, d_proj: np.ndarray) -> np.ndarray:
        emb = self._cache
        self.gw += np.einsum("nte,ntp->ep", emb, d_proj)
        self.gb += d_proj.sum(axis=(0, 1))
        return d_proj @ self.w.T

    def params(self):
        return {"weight": self.w, "bias": self.b}

    def grads(self):
        return {"weight": self.gw, "bias": self.gb}


@dataclass
class ForwardResult:
    embeddings: np.ndarray
    frame_probs: np.ndarray
    clip_probs: np.ndarray
    projections: np.ndarray | None = None


class SedModel:
    """Shared encoder with the classification and projection heads."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        if cfg.n_classes <= 0 or cfg.n_freq_bins <= 0:
            raise ValueError("ModelConfig needs positive n_classes and n_freq_bins")
        if len(cfg.channels) != len(cfg.freq_pools):
            raise ValueError("channels and freq_pools must align")
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.classifier = AttentionClassifier(cfg.embed_dim, cfg.n_classes, rng)
        self.projection = Projection(cfg.embed_dim, cfg.proj_dim, rng)
        self._forward_done = False

    def forward(self, feats: np.ndarray, train: bool, with_projection: bool = True,
                update_running: bool = True) -> ForwardResult:
        emb = self.encoder.forward(feats, train, update_running)
        frame_probs, clip_probs = self.classifier.forward(emb)
        proj = self.projection.forward(emb) if with_projection else None
        self._forward_done = True
        return ForwardResult(emb, frame_probs, clip_probs, proj)

    def backward(
        self,
        d_frame_probs: np.ndarray | None = None,
        d_clip_probs: np.ndarray | None = None,
        d_proj: np.ndarray | None = None,
    ) -> None:
        """Accumulate gradients; head gradients sum at the shared embeddings."""
        if not self._forward_done:
            raise RuntimeError("backward called before forward")
        d_emb = self.classifier.backward(d_frame_probs, d_clip_probs)
        if d_proj is not None:
            d_emb = d_emb + self.projection.backward(d_proj)
        self.encoder.backward(d_emb)

    def _components(self):
        comps = {}
        for b, block in enumerate(self.encoder.blocks, start=1):
            comps[f"encoder.block{b}.conv"] = block.conv
            comps[f"encoder.block{b}.bn"] = block.bn
        comps["classifier"] = self.classifier
        comps["projection"] = self.projection
        return comps

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, comp in self._components().items():
            for name, arr in comp.params().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, comp in self._components().items():
            for name, arr in comp.grads().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def bn_stats(self) -> dict[str, np.ndarray]:
        out = {}
        for b, block in enumerate(self.encoder.blocks, start=1):
            for name, arr in block.bn.stats().items():
                out[f"encoder.block{b}.bn.{name}"] = arr
        return out

    def zero_grads(self) -> None:
        for g in self.gradients().values():
            g[...] = 0.0

    def state(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.bn_stats()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.state()
        if set(state) != set(own):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in own.items():
            new = np.asarray(state[name], dtype=np.float64)
            if new.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {new.shape} vs {arr.shape}")
            arr[...] = new


def write_checkpoint(path, state: dict[str, np.ndarray], cfg: ModelConfig) -> None:
    """Versioned binary checkpoint: JSON header + raw little-endian float64."""
    names = sorted(state)
    header = {
        "format_version": 1,
        "config": {
            "n_classes": cfg.n_classes,
            "n_freq_bins": cfg.n_freq_bins,
            "channels": list(cfg.channels),
            "freq_pools": list(cfg.freq_pools),
            "kernel_size": cfg.kernel_size,
            "proj_dim": cfg.proj_dim,
            "bn_eps": cfg.bn_eps,
            "bn_momentum": cfg.bn_momentum,
        },
        "params": [{"name": n, "shape": list(state[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(state[n], dtype="<f8").tobytes())


def save_checkpoint(path, model: SedModel) -> None:
    write_checkpoint(path, model.state(), model.cfg)


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        state = {}
        for rec in header["params"]:
            shape = tuple(rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"{path}: truncated checkpoint at {rec['name']}")
            state[rec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    c = header["config"]
    cfg = ModelConfig(
        n_classes=c["n_classes"],
        n_freq_bins=c["n_freq_bins"],
        channels=tuple(c["channels"]),
        freq_pools=tuple(c["freq_pools"]),
        kernel_size=c["kernel_size"],
        proj_dim=c["proj_dim"],
        bn_eps=c["bn_eps"],
        bn_momentum=c["bn_momentum"],
    )
    return cfg, state


def build_model(cfg: ModelConfig, seed_seq: np.random.SeedSequence) -> SedModel:
    return SedModel(cfg, np.random.default_rng(seed_seq))
