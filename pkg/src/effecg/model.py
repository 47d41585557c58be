"""Model assembly for the two classifier variants.

The base variant: Conv1D stem -> MBConv stack -> global average pool,
concatenated with LSTM-autoencoder latents of the R-peak and P-wave
sequences, then two fully connected layers ending in softmax or sigmoid.
The fusion variant additionally embeds age and gender and runs the
demographic cross-attention block before the head.

Checkpoints are a single file: one line of compact JSON manifest
(format_version, config, tensor directory) followed by a raw
little-endian float32 payload.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from . import blocks as B
from .tensor import Tensor

GENDER_VOCAB = {"F": 0, "M": 1}
CHECKPOINT_VERSION = 1


@dataclass
class StageSpec:
    expansion: int
    out_channels: int
    kernel: int
    stride: int
    repeats: int
    se_ratio: int = 4


def default_stages() -> list[StageSpec]:
    # B0 layout carried over to 1D, kernels widened for 500 Hz sequences
    return [
        StageSpec(1, 16, 9, 1, 1),
        StageSpec(6, 24, 9, 2, 2),
        StageSpec(6, 40, 15, 2, 2),
        StageSpec(6, 80, 9, 2, 3),
        StageSpec(6, 112, 15, 1, 3),
        StageSpec(6, 192, 15, 2, 4),
        StageSpec(6, 320, 9, 1, 1),
    ]


@dataclass
class FusionConfig:
    enabled: bool = False
    embed_dim: int = 16
    age_bins: int = 10
    use_age: bool = True
    use_gender: bool = True
    use_cross_attention: bool = True
    tokens: int = 8
    attn_dim: int = 16
    scaled_logits: bool = False


@dataclass
class ModelConfig:
    leads: int = 1
    input_length: int = 5000
    class_count: int = 2
    head: str = "softmax"  # "softmax" for single-label, "sigmoid" for multi-label
    stem_channels: int = 32
    stem_kernel: int = 15
    stem_stride: int = 2
    stages: list[StageSpec] = field(default_factory=default_stages)
    fc_hidden: int = 64
    dropout_rate: float = 0.2
    l2_lambda: float = 1e-4
    ae_hidden: int = 8
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        self.stages = [s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages]
        if isinstance(self.fusion, dict):
            self.fusion = FusionConfig(**self.fusion)
        if self.head not in ("softmax", "sigmoid"):
            raise ValueError(f"head must be 'softmax' or 'sigmoid', got {self.head!r}")
        if self.fusion.enabled and not (self.fusion.use_age or self.fusion.use_gender):
            raise ValueError("fusion enabled but both use_age and use_gender are off")
        n = self.input_length
        if self.stem_stride > n:
            raise ValueError(
                f"stem stride {self.stem_stride} would reduce temporal length below 1 "
                f"(input_length={n})"
            )
        n = -(-n // self.stem_stride)
        for i, s in enumerate(self.stages):
            if s.stride > n:
                raise ValueError(
                    f"stage {i} stride {s.stride} would reduce temporal length below 1 "
                    f"(remaining length {n}, input_length={self.input_length})"
                )
            n = -(-n // s.stride)

    @property
    def backbone_channels(self) -> int:
        return self.stages[-1].out_channels if self.stages else self.stem_channels

    @property
    def feature_width(self) -> int:
        return self.backbone_channels + 2 * self.ae_hidden

    @property
    def token_width(self) -> int:
        return -(-self.feature_width // self.fusion.tokens)

    @property
    def head_input_width(self) -> int:
        f = self.feature_width
        if not self.fusion.enabled:
            return f
        if self.fusion.use_cross_attention:
            return 2 * f  # pooled feature + aligned attention output
        d = self.fusion.embed_dim
        return f + d * int(self.fusion.use_age) + d * int(self.fusion.use_gender)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def age_to_bin(age: int, age_bins: int) -> int:
    """Decade binning: 0-9 -> 0, ..., with the last bin open-ended."""
    if age < 0:
        raise ValueError(f"age must be non-negative, got {age}")
    return min(age // 10, age_bins - 1)


@dataclass
class Batch:
    """One training/eval batch with padded fiducial sequences."""

    x: np.ndarray                 # [B, C, N]
    r_values: np.ndarray          # [B, T_r] int indices (pad_value where masked)
    r_mask: np.ndarray            # [B, T_r] 0/1
    p_values: np.ndarray
    p_mask: np.ndarray
    labels: list[set[int]]
    ages: np.ndarray | None = None     # [B] int years, -1 where missing
    genders: np.ndarray | None = None  # [B] int {0,1}, -1 where missing

    @property
    def size(self) -> int:
        return self.x.shape[0]


class Model:
    """Realized parameter set for a ModelConfig, with deterministic init."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        cfg = config

        self.stem = B.Conv1d(cfg.leads, cfg.stem_channels, cfg.stem_kernel,
                             cfg.stem_stride, "same", rng)
        self.stem_bn = B.BatchNorm1d(cfg.stem_channels)
        self.blocks: list[B.MbConvBlock] = []
        in_ch = cfg.stem_channels
        for s in cfg.stages:
            for r in range(s.repeats):
                stride = s.stride if r == 0 else 1
                self.blocks.append(
                    B.MbConvBlock(in_ch, s.out_channels, s.expansion, s.kernel,
                                  stride, s.se_ratio, rng)
                )
                in_ch = s.out_channels

        self.ae_r = B.LstmAutoencoder(cfg.ae_hidden, rng)
        self.ae_p = B.LstmAutoencoder(cfg.ae_hidden, rng)

        self.age_embed = None
        self.gender_embed = None
        self.fusion_block = None
        fus = cfg.fusion
        if fus.enabled:
            if fus.use_age:
                self.age_embed = B.EmbeddingLayer(fus.age_bins, fus.embed_dim, rng)
            if fus.use_gender:
                self.gender_embed = B.EmbeddingLayer(len(GENDER_VOCAB), fus.embed_dim, rng)
            if fus.use_cross_attention:
                self.fusion_block = B.CrossAttentionFusion(
                    tokens=fus.tokens, token_width=cfg.token_width,
                    feat_dim=fus.embed_dim, attn_dim=fus.attn_dim,
                    align_dim=cfg.feature_width, rng=rng,
                    use_age=fus.use_age, use_gender=fus.use_gender,
                    scaled=fus.scaled_logits,
                )

        self.fc1 = B.Dense(cfg.head_input_width, cfg.fc_hidden, rng)
        self.head = B.Dense(cfg.fc_hidden, cfg.class_count, rng)

    # -- parameter plumbing -------------------------------------------------

    def _components(self):
        comps = [("stem", self.stem), ("stem_bn", self.stem_bn)]
        for i, blk in enumerate(self.blocks):
            comps.append((f"block{i}", blk))
        comps += [("ae_r", self.ae_r), ("ae_p", self.ae_p)]
        if self.age_embed is not None:
            comps.append(("age_embed", self.age_embed))
        if self.gender_embed is not None:
            comps.append(("gender_embed", self.gender_embed))
        if self.fusion_block is not None:
            comps.append(("fusion", self.fusion_block))
        comps += [("fc1", self.fc1), ("head", self.head)]
        return comps

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, comp in self._components():
            for name, p in comp.named_params():
                out[f"{prefix}.{name}"] = p
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, comp in self._components():
            for name, b in comp.named_buffers():
                out[f"{prefix}.{name}"] = b
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        prefix, rest = name.split(".", 1)
        owner = dict(self._components())[prefix]
        *owner_path, buf_name = rest.split(".")
        for part in owner_path:
            owner = getattr(owner, part)
        owner.set_buffer(buf_name, value)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_params().values())

    def l2_params(self) -> list[Tensor]:
        """Weight matrices under the L2 penalty: the FC layers only,
        biases excluded."""
        return [self.fc1.w, self.head.w]

    # -- forward ------------------------------------------------------------

    def _demographics(self, batch: Batch):
        fus = self.config.fusion
        age_emb = gender_emb = None
        if fus.enabled and fus.use_age:
            if batch.ages is None or np.any(batch.ages < 0):
                raise ValueError("fusion model requires 'age' for every record in the batch")
            bins = np.array([age_to_bin(int(a), fus.age_bins) for a in batch.ages])
            age_emb = self.age_embed(bins)
        if fus.enabled and fus.use_gender:
            if batch.genders is None or np.any(batch.genders < 0):
                raise ValueError("fusion model requires 'gender' for every record in the batch")
            gender_emb = self.gender_embed(batch.genders)
        return age_emb, gender_emb

    def features(self, batch: Batch, mode: str, x: Tensor | None = None) -> Tensor:
        """Backbone + fiducial latents -> pooled feature [B, F].

        ``x`` overrides the wrapped batch samples (gradient verification
        against the raw input path).
        """
        cfg = self.config
        if batch.x.shape[1] != cfg.leads or batch.x.shape[2] != cfg.input_length:
            raise ValueError(
                f"batch shape {batch.x.shape[1:]} does not match configured "
                f"(leads={cfg.leads}, input_length={cfg.input_length})"
            )
        h = T.swish(self.stem_bn(self.stem(Tensor(batch.x) if x is None else x), mode))
        for blk in self.blocks:
            h = blk(h, mode)
        pooled = T.global_avg_pool(h)  # [B, C_last]
        scale = 1.0 / cfg.input_length
        r_lat = self.ae_r.encode(batch.r_values * scale, batch.r_mask)
        p_lat = self.ae_p.encode(batch.p_values * scale, batch.p_mask)
        return T.concat([pooled, r_lat, p_lat], axis=1)

    def forward(self, batch: Batch, mode: str = "eval",
                rng: np.random.Generator | None = None,
                x: Tensor | None = None) -> Tensor:
        """Per-class scores [B, K]: softmax rows or independent sigmoids."""
        cfg = self.config
        feat = self.features(batch, mode, x)
        fus = cfg.fusion
        if fus.enabled:
            age_emb, gender_emb = self._demographics(batch)
            if fus.use_cross_attention:
                pad = fus.tokens * cfg.token_width - cfg.feature_width
                padded = feat if pad == 0 else T.concat(
                    [feat, Tensor(np.zeros((batch.size, pad)))], axis=1)
                tokens = T.reshape(padded, (batch.size, fus.tokens, cfg.token_width))
                aligned = self.fusion_block(tokens, age_emb, gender_emb)
                head_in = T.concat([feat, aligned], axis=1)
            else:
                parts = [feat]
                if age_emb is not None:
                    parts.append(age_emb)
                if gender_emb is not None:
                    parts.append(gender_emb)
                head_in = T.concat(parts, axis=1)
        else:
            head_in = feat

        hidden = T.relu(self.fc1(head_in))
        hidden = B.dropout(hidden, cfg.dropout_rate, mode, rng)
        logits = self.head(hidden)
        if cfg.head == "softmax":
            return T.softmax(logits, axis=-1)
        return T.sigmoid(logits)


def predict(scores: np.ndarray, thresholds: np.ndarray | None, head: str):
    """Map scores to labels: argmax for softmax, per-class thresholds for
    sigmoid (label set {c : score_c >= threshold_c})."""
    scores = np.asarray(scores, dtype=np.float64)
    if head == "softmax":
        return [int(i) for i in scores.argmax(axis=-1)]
    if thresholds is None:
        thresholds = np.full(scores.shape[-1], 0.5)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.shape != (scores.shape[-1],):
        raise ValueError(
            f"threshold vector length {thresholds.shape} does not match "
            f"class count {scores.shape[-1]}"
        )
    return [set(np.flatnonzero(row >= thresholds).tolist()) for row in scores]


# -- analytic parameter counting (independent of the builder) ---------------

def _lstm_cell_count(input_dim: int, hidden: int) -> int:
    return 4 * (input_dim * hidden + hidden * hidden + hidden)


def _ae_count(hidden: int) -> int:
    return _lstm_cell_count(1, hidden) + _lstm_cell_count(hidden, hidden) + (hidden + 1)


def analytic_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count from the configuration alone."""
    total = cfg.stem_channels * cfg.leads * cfg.stem_kernel  # stem conv
    total += 2 * cfg.stem_channels                           # stem BN
    in_ch = cfg.stem_channels
    for s in cfg.stages:
        for r in range(s.repeats):
            mid = in_ch * s.expansion
            se_hidden = max(1, mid // s.se_ratio)
            total += mid * in_ch * 1 + 2 * mid               # expand + BN
            total += mid * s.kernel + 2 * mid                # depthwise + BN
            total += mid * se_hidden + se_hidden             # SE fc1
            total += se_hidden * mid + mid                   # SE fc2
            total += s.out_channels * mid * 1 + 2 * s.out_channels  # project + BN
            in_ch = s.out_channels
    total += 2 * _ae_count(cfg.ae_hidden)
    fus = cfg.fusion
    if fus.enabled:
        d, toks = fus.embed_dim, fus.tokens
        if fus.use_age:
            total += fus.age_bins * d
        if fus.use_gender:
            total += len(GENDER_VOCAB) * d
        if fus.use_cross_attention:
            pairs = int(fus.use_age) + int(fus.use_gender)
            total += 2 * pairs * d * (toks * fus.attn_dim)   # Q/K projections
            total += cfg.token_width * fus.attn_dim          # value projection
            total += toks * fus.attn_dim * cfg.feature_width + cfg.feature_width  # align
    total += cfg.head_input_width * cfg.fc_hidden + cfg.fc_hidden
    total += cfg.fc_hidden * cfg.class_count + cfg.class_count
    return total


# -- checkpoint persistence --------------------------------------------------

def save_checkpoint(model: Model, path: str) -> None:
    """Single-file checkpoint: JSON manifest line + float32 payload."""
    entries = []
    arrays = []
    offset = 0
    for name, p in model.named_params().items():
        entries.append({"name": name, "shape": list(p.shape), "offset": offset,
                        "len": int(p.size), "kind": "param"})
        arrays.append(p.data.astype("<f4").reshape(-1))
        offset += p.size
    for name, buf in model.named_buffers().items():
        entries.append({"name": name, "shape": list(buf.shape), "offset": offset,
                        "len": int(buf.size), "kind": "buffer"})
        arrays.append(buf.astype("<f4").reshape(-1))
        offset += buf.size
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "config": model.config.to_dict(),
        "tensors": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.concatenate(arrays).tobytes() if arrays else b"")


def load_checkpoint(path: str) -> Model:
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed checkpoint manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unknown checkpoint format version {version!r}")
    entries = manifest["tensors"]
    expected = sum(e["len"] for e in entries) * 4
    if len(payload) != expected:
        raise ValueError(
            f"checkpoint payload length mismatch: expected {expected} bytes, "
            f"got {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    model = Model(ModelConfig.from_dict(manifest["config"]), seed=manifest.get("seed", 0))
    params = model.named_params()
    buffers = model.named_buffers()
    for e in entries:
        chunk = flat[e["offset"] : e["offset"] + e["len"]].astype(np.float64)
        shaped = chunk.reshape(e["shape"])
        if e["kind"] == "param":
            if e["name"] not in params:
                raise ValueError(f"checkpoint names unknown parameter {e['name']!r}")
            target = params[e["name"]]
            if tuple(target.shape) != tuple(e["shape"]):
                raise ValueError(
                    f"shape mismatch for {e['name']!r}: checkpoint {e['shape']}, "
                    f"model {list(target.shape)}"
                )
            target.data = shaped
        else:
            if e["name"] not in buffers:
                raise ValueError(f"checkpoint names unknown buffer {e['name']!r}")
            model.set_buffer(e["name"], shaped)
    return model
