"""Network building blocks.

Dense/conv layers, squeeze-and-excitation, the mobile inverted bottleneck,
batch normalization, inverted dropout, an LSTM cell and autoencoder for
sparse fiducial sequences, embedding lookup, and the demographic
cross-attention fusion block.

All blocks consume and produce batched tensors ([B, ...]) and expose
``named_params()`` / ``named_buffers()`` for checkpointing.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def he_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


class Dense:
    """Affine transform [B, in] -> [B, out]."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.w = he_init(rng, (in_dim, out_dim), in_dim)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.w)
        if self.b is not None:
            out = out + self.b
        return out

    def named_params(self):
        items = [("w", self.w)]
        if self.b is not None:
            items.append(("b", self.b))
        return items

    def named_buffers(self):
        return []


class Conv1d:
    """Cross-correlation layer [B, C_in, N] -> [B, C_out, N']."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int,
                 padding: str, rng: np.random.Generator, bias: bool = False):
        self.stride = stride
        self.padding = padding
        self.w = he_init(rng, (out_ch, in_ch, kernel), in_ch * kernel)
        self.b = Tensor(np.zeros((out_ch, 1)), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.conv1d(x, self.w, self.stride, self.padding)
        if self.b is not None:
            out = out + self.b
        return out

    def named_params(self):
        items = [("w", self.w)]
        if self.b is not None:
            items.append(("b", self.b))
        return items

    def named_buffers(self):
        return []


class DepthwiseConv1d:
    """Per-channel cross-correlation; channels never mix."""

    def __init__(self, channels: int, kernel: int, stride: int, padding: str,
                 rng: np.random.Generator):
        self.stride = stride
        self.padding = padding
        self.w = he_init(rng, (channels, kernel), kernel)

    def __call__(self, x: Tensor) -> Tensor:
        return T.depthwise_conv1d(x, self.w, self.stride, self.padding)

    def named_params(self):
        return [("w", self.w)]

    def named_buffers(self):
        return []


class BatchNorm1d:
    """Per-channel batch normalization with running statistics.

    Train mode normalizes over the batch (and time, for [B,C,N] input) and
    updates running stats with momentum 0.9; eval mode applies the running
    stats. Train mode requires batch >= 2.
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-8):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        conv_like = x.data.ndim == 3
        if x.shape[1 if conv_like else -1] != self.channels:
            raise ValueError(
                f"batchnorm configured for {self.channels} channels, input has shape {x.shape}"
            )
        shape = (1, self.channels, 1) if conv_like else (1, self.channels)
        gamma = T.reshape(self.gamma, shape)
        beta = T.reshape(self.beta, shape)
        if mode == "train":
            if x.shape[0] < 2:
                raise ValueError("batchnorm train mode requires batch size >= 2")
            axes = (0, 2) if conv_like else (0,)
            mean = T.tmean(x, axis=axes, keepdims=True)
            centered = x - mean
            var = T.tmean(centered * centered, axis=axes, keepdims=True)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean.data.reshape(-1)
            self.running_var = m * self.running_var + (1 - m) * var.data.reshape(-1)
            xhat = centered / T.sqrt(var + self.eps)
        elif mode == "eval":
            rm = self.running_mean.reshape(shape)
            rv = self.running_var.reshape(shape)
            xhat = (x - rm) * Tensor(1.0 / np.sqrt(rv + self.eps))
        else:
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        return gamma * xhat + beta

    def named_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def named_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, np.asarray(value, dtype=np.float64).copy())


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept activations scaled by 1/(1-rate) at train time.

    Eval mode is an exact identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


class SeBlock:
    """Squeeze-and-excitation: pooled gating weights rescale each channel."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        hidden = max(1, channels // reduction)
        self.fc1 = Dense(channels, hidden, rng)
        self.fc2 = Dense(hidden, channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        squeezed = T.global_avg_pool(x)                       # [B, C]
        s = T.sigmoid(self.fc2(T.relu(self.fc1(squeezed))))   # [B, C] in (0,1)
        return x * T.reshape(s, (x.shape[0], x.shape[1], 1))

    def excitation(self, x: Tensor) -> Tensor:
        return T.sigmoid(self.fc2(T.relu(self.fc1(T.global_avg_pool(x)))))

    def named_params(self):
        return [(f"fc1.{n}", p) for n, p in self.fc1.named_params()] + \
               [(f"fc2.{n}", p) for n, p in self.fc2.named_params()]

    def named_buffers(self):
        return []


class MbConvBlock:
    """Mobile inverted bottleneck.

    expand 1x1 conv -> BN -> swish -> depthwise conv -> BN -> swish -> SE
    -> project 1x1 conv -> BN, with a residual add exactly when stride == 1
    and in_channels == out_channels.
    """

    def __init__(self, in_ch: int, out_ch: int, expansion: int, kernel: int,
                 stride: int, se_reduction: int, rng: np.random.Generator):
        mid = in_ch * expansion
        self.use_residual = stride == 1 and in_ch == out_ch
        self.expand = Conv1d(in_ch, mid, 1, 1, "same", rng)
        self.bn0 = BatchNorm1d(mid)
        self.depthwise = DepthwiseConv1d(mid, kernel, stride, "same", rng)
        self.bn1 = BatchNorm1d(mid)
        self.se = SeBlock(mid, se_reduction, rng)
        self.project = Conv1d(mid, out_ch, 1, 1, "same", rng)
        self.bn2 = BatchNorm1d(out_ch)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        h = T.swish(self.bn0(self.expand(x), mode))
        h = T.swish(self.bn1(self.depthwise(h), mode))
        h = self.se(h)
        h = self.bn2(self.project(h), mode)
        if self.use_residual:
            h = h + x
        return h

    def named_params(self):
        out = []
        for prefix, sub in [("expand", self.expand), ("bn0", self.bn0),
                            ("depthwise", self.depthwise), ("bn1", self.bn1),
                            ("se", self.se), ("project", self.project), ("bn2", self.bn2)]:
            out += [(f"{prefix}.{n}", p) for n, p in sub.named_params()]
        return out

    def named_buffers(self):
        out = []
        for prefix, sub in [("bn0", self.bn0), ("bn1", self.bn1), ("bn2", self.bn2)]:
            out += [(f"{prefix}.{n}", b) for n, b in sub.named_buffers()]
        return out


class LstmCell:
    """Standard LSTM cell: i, f, o sigmoid gates and a tanh candidate."""

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.gates = {}
        for gate in ("i", "f", "o", "g"):
            self.gates[gate] = (
                he_init(rng, (input_dim, hidden), input_dim),
                he_init(rng, (hidden, hidden), hidden),
                Tensor(np.zeros(hidden), requires_grad=True),
            )

    def _gate(self, name: str, x: Tensor, h: Tensor) -> Tensor:
        wx, wh, b = self.gates[name]
        return T.matmul(x, wx) + T.matmul(h, wh) + b

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        i = T.sigmoid(self._gate("i", x, h))
        f = T.sigmoid(self._gate("f", x, h))
        o = T.sigmoid(self._gate("o", x, h))
        g = T.tanh(self._gate("g", x, h))
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        return h_new, c_new

    def named_params(self):
        out = []
        for gate, (wx, wh, b) in self.gates.items():
            out += [(f"{gate}.wx", wx), (f"{gate}.wh", wh), (f"{gate}.b", b)]
        return out

    def named_buffers(self):
        return []


class LstmAutoencoder:
    """Sequence-to-latent encoder with a reconstructing decoder.

    The encoder consumes scalar steps (fiducial indices normalized by the
    record length); masked positions carry the state through unchanged, so
    the latent depends only on mask-valid entries. The decoder repeats the
    latent as input at every step and reconstructs the sequence through a
    per-step dense head (used by the optional reconstruction loss).
    """

    def __init__(self, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.encoder = LstmCell(1, hidden, rng)
        self.decoder = LstmCell(hidden, hidden, rng)
        self.out = Dense(hidden, 1, rng)

    def encode(self, values: np.ndarray, mask: np.ndarray) -> Tensor:
        """[B,T] values + [B,T] mask -> [B,H] latent."""
        batch, steps = values.shape
        h = Tensor(np.zeros((batch, self.hidden)))
        c = Tensor(np.zeros((batch, self.hidden)))
        for step in range(steps):
            x_t = Tensor(values[:, step : step + 1])
            m = Tensor(mask[:, step : step + 1])
            h_new, c_new = self.encoder(x_t, h, c)
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
        return h

    def encode_feature(self, feature, length_norm: float = 1.0) -> Tensor:
        """One padded fiducial sequence -> [H] latent.

        ``length_norm`` scales raw sample indices (typically 1/N); masked
        positions never reach the state, so the pad sentinel is irrelevant.
        """
        values = feature.values[None, :].astype(np.float64) * length_norm
        return T.reshape(self.encode(values, feature.mask[None, :]), (self.hidden,))

    def decode(self, latent: Tensor, steps: int) -> Tensor:
        """[B,H] latent -> [B,T] reconstruction."""
        batch = latent.shape[0]
        h = Tensor(np.zeros((batch, self.hidden)))
        c = Tensor(np.zeros((batch, self.hidden)))
        outputs = []
        for _ in range(steps):
            h, c = self.decoder(latent, h, c)
            outputs.append(self.out(h))
        return T.concat(outputs, axis=1)

    def reconstruction_loss(self, values: np.ndarray, mask: np.ndarray) -> Tensor:
        latent = self.encode(values, mask)
        recon = self.decode(latent, values.shape[1])
        m = Tensor(mask)
        diff = (recon - Tensor(values)) * m
        denom = max(float(mask.sum()), 1.0)
        return T.tsum(diff * diff) / denom

    def named_params(self):
        out = [(f"encoder.{n}", p) for n, p in self.encoder.named_params()]
        out += [(f"decoder.{n}", p) for n, p in self.decoder.named_params()]
        out += [(f"out.{n}", p) for n, p in self.out.named_params()]
        return out

    def named_buffers(self):
        return []


class EmbeddingLayer:
    """V x D lookup table; gradient flows only to the looked-up rows."""

    def __init__(self, vocab: int, dim: int, rng: np.random.Generator):
        self.vocab = vocab
        self.dim = dim
        bound = 1.0 / np.sqrt(vocab)
        self.table = Tensor(rng.uniform(-bound, bound, size=(vocab, dim)), requires_grad=True)

    def __call__(self, indices: np.ndarray) -> Tensor:
        idx = np.asarray(indices, dtype=np.int64)
        bad = idx[(idx < 0) | (idx >= self.vocab)]
        if bad.size:
            raise IndexError(f"embedding index {bad[0]} out of range [0, {self.vocab})")
        return T.gather_rows(self.table, idx)

    def named_params(self):
        return [("table", self.table)]

    def named_buffers(self):
        return []


def embed(index: int, layer: EmbeddingLayer) -> Tensor:
    """Single lookup -> [D] row copy."""
    return T.reshape(layer(np.array([index])), (layer.dim,))


class CrossAttentionFusion:
    """Demographic cross-attention over an ECG value tensor.

    The ECG feature arrives as L_e tokens of width d_e and is projected
    token-wise to width d (the value tensor). Age and gender embeddings
    are projected to L_e query/key tokens of width d each, giving
    age-to-gender and gender-to-age attention maps

        softmax(Q_age  K_gender^T)   and   softmax(Q_gender K_age^T),

    both row-stochastic over the key tokens. Their sum multiplies the
    value tensor; the result is re-aligned by a linear transform so it can
    be concatenated with the pooled ECG feature. When only one demographic
    is present, its self-pair map softmax(Q K^T) is used instead.

    ``scaled`` divides logits by sqrt(d) before softmax; off by default so
    the maps follow the plain product form.
    """

    def __init__(self, tokens: int, token_width: int, feat_dim: int, attn_dim: int,
                 align_dim: int, rng: np.random.Generator,
                 use_age: bool = True, use_gender: bool = True, scaled: bool = False):
        if not (use_age or use_gender):
            raise ValueError("cross-attention needs at least one demographic feature")
        self.tokens = tokens
        self.attn_dim = attn_dim
        self.scaled = scaled
        self.use_age = use_age
        self.use_gender = use_gender
        proj = tokens * attn_dim
        if use_age:
            self.w_qa = he_init(rng, (feat_dim, proj), feat_dim)
            self.w_ka = he_init(rng, (feat_dim, proj), feat_dim)
        if use_gender:
            self.w_qg = he_init(rng, (feat_dim, proj), feat_dim)
            self.w_kg = he_init(rng, (feat_dim, proj), feat_dim)
        self.w_v = he_init(rng, (token_width, attn_dim), token_width)
        self.align = Dense(tokens * attn_dim, align_dim, rng)

    def _tokens(self, emb: Tensor, weight: Tensor) -> Tensor:
        batch = emb.shape[0]
        return T.reshape(T.matmul(emb, weight), (batch, self.tokens, self.attn_dim))

    def _attend(self, q: Tensor, k: Tensor) -> Tensor:
        logits = T.bmm(q, T.swap_last2(k))
        if self.scaled:
            logits = logits * (1.0 / np.sqrt(self.attn_dim))
        return T.softmax(logits, axis=-1)

    def __call__(self, ecg_tokens: Tensor, age_emb: Tensor | None,
                 gender_emb: Tensor | None) -> Tensor:
        """[B,L_e,d_e] tokens + [B,D] embeddings -> [B, align_dim]."""
        batch = ecg_tokens.shape[0]
        values = T.bmm(ecg_tokens, self.w_v)                 # [B, L_e, d]
        if self.use_age and self.use_gender:
            if age_emb is None or gender_emb is None:
                raise ValueError("cross-attention configured for age and gender; both required")
            q_a = self._tokens(age_emb, self.w_qa)
            k_a = self._tokens(age_emb, self.w_ka)
            q_g = self._tokens(gender_emb, self.w_qg)
            k_g = self._tokens(gender_emb, self.w_kg)
            maps = self._attend(q_a, k_g) + self._attend(q_g, k_a)
        elif self.use_age:
            if age_emb is None:
                raise ValueError("cross-attention configured for age; age embedding required")
            maps = self._attend(self._tokens(age_emb, self.w_qa),
                                self._tokens(age_emb, self.w_ka))
        else:
            if gender_emb is None:
                raise ValueError("cross-attention configured for gender; gender embedding required")
            maps = self._attend(self._tokens(gender_emb, self.w_qg),
                                self._tokens(gender_emb, self.w_kg))
        attended = T.bmm(maps, values)                       # [B, L_e, d]
        flat = T.reshape(attended, (batch, self.tokens * self.attn_dim))
        return self.align(flat)

    def named_params(self):
        out = []
        if self.use_age:
            out += [("w_qa", self.w_qa), ("w_ka", self.w_ka)]
        if self.use_gender:
            out += [("w_qg", self.w_qg), ("w_kg", self.w_kg)]
        out.append(("w_v", self.w_v))
        out += [(f"align.{n}", p) for n, p in self.align.named_params()]
        return out

    def named_buffers(self):
        return []


def cross_attention_fuse(ecg_feat: Tensor, age_feat: Tensor, gender_feat: Tensor,
                         fusion: CrossAttentionFusion, pooled: Tensor) -> Tensor:
    """Single-sample fusion: attended demographics concatenated with the
    pooled ECG feature."""
    tokens = T.reshape(ecg_feat, (1,) + tuple(ecg_feat.shape))
    age = T.reshape(age_feat, (1, age_feat.shape[0])) if age_feat is not None else None
    gender = T.reshape(gender_feat, (1, gender_feat.shape[0])) if gender_feat is not None else None
    aligned = fusion(tokens, age, gender)
    return T.concat([T.reshape(pooled, (1, pooled.shape[0])), aligned], axis=1)
