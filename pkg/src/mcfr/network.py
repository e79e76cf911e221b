"""The fusion network: shared branch, RGB branch, event branch, and the
multi-domain classification head.

Data flow for one sample: the 7-channel assembled input passes through a
learned 1x1 channel transform (tau, 7->3) into the shared convolutional
branch (CFE); the raw RGB planes feed the RGB-only branch (UER); the event
branch (UEE, spiking, frozen) contributes a feature map computed outside
the differentiable path. Enabled branch outputs are concatenated in the
fixed order UEE|CFE|UER, selected by a 1x1 fusion convolution, flattened,
and classified by fc4 -> fc5 -> fc6^k, where each domain k owns its own
two-logit fc6 branch.

Training uses softmax cross-entropy and SGD with per-group learning rates;
a train step for domain k touches shared parameters and fc6^k only, and
never the event branch.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import CheckpointError, ConfigError, GeometryError
from .nn import (
    SGDConfig,
    SGDState,
    adaptive_avgpool_backward,
    adaptive_avgpool_forward,
    conv2d_backward,
    conv2d_forward,
    conv_out_dim,
    fc_backward,
    fc_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    softmax_ce_backward,
    softmax_ce_forward,
)
from .snn import SRMParams, UeeNetwork, make_uee

CHECKPOINT_MAGIC = b"MCFR"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ConvBlockSpec:
    """One conv(+ReLU)(+max-pool) stage."""

    out_channels: int
    kernel: int
    stride: int
    padding: int
    pool: int = 0  # 0 = no pooling
    pool_stride: int = 2


@dataclass(frozen=True)
class SRMNetSpec:
    """Event-branch layout: (in, hidden..., out) channels, shared geometry."""

    channels: tuple[int, ...] = (2, 16, 32, 64)
    kernel: int = 3
    stride: int = 2
    padding: int = 1
    tau_s: float = 5.0
    tau_r: float = 5.0
    phi: float = 1.0
    dt: float = 1.0
    t_bins: int = 32

    def srm_params(self) -> SRMParams:
        return SRMParams(
            tau_s=self.tau_s, tau_r=self.tau_r, phi=self.phi,
            dt=self.dt, t_bins=self.t_bins,
        )


@dataclass(frozen=True)
class AblationFlags:
    use_uee: bool = True
    use_cfe: bool = True
    use_uer: bool = True
    use_counts: bool = True
    use_timestamps: bool = True
    rgb_only: bool = False
    event_only: bool = False

    def __post_init__(self):
        if not (self.use_uee or self.use_cfe or self.use_uer):
            raise ConfigError("at least one branch must stay enabled")
        if self.rgb_only and self.event_only:
            raise ConfigError("rgb_only and event_only are mutually exclusive")
        if self.event_only and self.use_uer:
            raise ConfigError("the RGB branch cannot run on event-only input")
        if self.rgb_only and self.use_uee:
            raise ConfigError("the event branch cannot run on rgb-only input")

    # channel groups of the assembled input actually populated
    @property
    def input_use_rgb(self) -> bool:
        return not self.event_only

    @property
    def input_use_counts(self) -> bool:
        return self.use_counts and not self.rgb_only

    @property
    def input_use_timestamps(self) -> bool:
        return self.use_timestamps and not self.rgb_only


# Named variant -> flag overrides; the benchmark's eight ablations + full.
ABLATION_VARIANTS: dict[str, dict] = {
    "full": {},
    "oe": {"use_uee": False, "use_uer": False, "event_only": True},
    "or": {"use_uee": False, "use_uer": False, "rgb_only": True},
    "er": {"use_uee": False, "use_uer": False},
    "no-uee": {"use_uee": False},
    "no-cfe": {"use_cfe": False},
    "no-uer": {"use_uer": False},
    "c": {"use_timestamps": False},
    "t": {"use_counts": False},
}


def ablation_flags(variant: str) -> AblationFlags:
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(
            f"unknown ablation variant {variant!r}; "
            f"choose from {sorted(ABLATION_VARIANTS)}"
        )
    return AblationFlags(**ABLATION_VARIANTS[variant])


@dataclass(frozen=True)
class MCFRConfig:
    input_crop: int = 107
    cfe: tuple[ConvBlockSpec, ...] = (
        ConvBlockSpec(96, 7, 2, 0, pool=3, pool_stride=2),
        ConvBlockSpec(256, 5, 2, 0, pool=3, pool_stride=2),
        ConvBlockSpec(512, 3, 1, 0),
    )
    uer: tuple[ConvBlockSpec, ...] = (
        ConvBlockSpec(128, 3, 2, 0, pool=3, pool_stride=2),
        ConvBlockSpec(256, 1, 1, 0, pool=3, pool_stride=2),
        ConvBlockSpec(256, 1, 1, 0),
    )
    uee: SRMNetSpec = SRMNetSpec()
    fusion_channels: int = 512
    fc_dims: tuple[int, int] = (512, 512)
    num_domains: int = 1
    ablation: AblationFlags = AblationFlags()

    def __post_init__(self):
        if self.num_domains < 1:
            raise ConfigError("num_domains must be >= 1")
        if len(self.cfe) != 3 or len(self.uer) != 3:
            raise ConfigError("shared and RGB branches take exactly 3 conv blocks")
        if self.uee.channels[0] != 2:
            raise ConfigError("event branch input is the 2 polarity channels")
        self.feature_hw  # validate geometry early

    @property
    def feature_hw(self) -> tuple[int, int]:
        """Spatial size of every branch output (the shared branch defines it)."""
        size = self.input_crop
        for block in self.cfe:
            size = conv_out_dim(size, block.kernel, block.stride, block.padding)
            if block.pool:
                size = conv_out_dim(size, block.pool, block.pool_stride, 0)
        return (size, size)

    @property
    def branch_channels(self) -> dict[str, int]:
        out = {}
        if self.ablation.use_uee:
            out["uee"] = self.uee.channels[-1]
        if self.ablation.use_cfe:
            out["cfe"] = self.cfe[-1].out_channels
        if self.ablation.use_uer:
            out["uer"] = self.uer[-1].out_channels
        return out

    @property
    def fusion_in_channels(self) -> int:
        return sum(self.branch_channels.values())

    @property
    def fc_in_dim(self) -> int:
        h, w = self.feature_hw
        return self.fusion_channels * h * w

    def with_ablation(self, variant: str) -> "MCFRConfig":
        return replace(self, ablation=ablation_flags(variant))

    def with_num_domains(self, k: int) -> "MCFRConfig":
        return replace(self, num_domains=k)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MCFRConfig":
        d = copy.deepcopy(d)
        d["cfe"] = tuple(ConvBlockSpec(**b) for b in d["cfe"])
        d["uer"] = tuple(ConvBlockSpec(**b) for b in d["uer"])
        uee = d["uee"]
        uee["channels"] = tuple(uee["channels"])
        d["uee"] = SRMNetSpec(**uee)
        d["fc_dims"] = tuple(d["fc_dims"])
        d["ablation"] = AblationFlags(**d["ablation"])
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @classmethod
    def reduced(cls, num_domains: int = 1, ablation: AblationFlags | None = None):
        """Desk-scale geometry: crop 75, narrow channels, 8 time bins."""
        return cls(
            input_crop=75,
            cfe=(
                ConvBlockSpec(16, 7, 2, 0, pool=3, pool_stride=2),
                ConvBlockSpec(32, 5, 2, 0, pool=3, pool_stride=2),
                ConvBlockSpec(64, 3, 1, 0),
            ),
            uer=(
                ConvBlockSpec(16, 3, 2, 0, pool=3, pool_stride=2),
                ConvBlockSpec(32, 1, 1, 0, pool=3, pool_stride=2),
                ConvBlockSpec(32, 1, 1, 0),
            ),
            uee=SRMNetSpec(channels=(2, 4, 8, 16), t_bins=8),
            fusion_channels=64,
            fc_dims=(64, 64),
            num_domains=num_domains,
            ablation=ablation or AblationFlags(),
        )

    @classmethod
    def tiny(cls, num_domains: int = 2, ablation: AblationFlags | None = None):
        """Gradient-check geometry: everything as small as the layer set allows."""
        return cls(
            input_crop=19,
            cfe=(
                ConvBlockSpec(4, 7, 2, 0),
                ConvBlockSpec(6, 5, 2, 0),
                ConvBlockSpec(8, 3, 1, 1),
            ),
            uer=(
                ConvBlockSpec(4, 3, 2, 0),
                ConvBlockSpec(6, 1, 1, 0),
                ConvBlockSpec(6, 1, 1, 0),
            ),
            uee=SRMNetSpec(channels=(2, 3, 4), t_bins=4),
            fusion_channels=8,
            fc_dims=(8, 8),
            num_domains=num_domains,
            ablation=ablation or AblationFlags(),
        )


class MCFRModel:
    """Parameter store plus the frozen event-branch network."""

    def __init__(self, config: MCFRConfig, params: dict[str, np.ndarray],
                 uee: UeeNetwork | None):
        self.config = config
        self.params = params
        self.uee = uee
        if config.ablation.use_uee and uee is None:
            raise ConfigError("config enables the event branch but no UEE given")

    @classmethod
    def initialize(cls, config: MCFRConfig, seed: int = 0) -> "MCFRModel":
        """He-scaled Gaussian init for convs and hidden fcs; small Gaussian
        for the domain heads; zero biases.

        Fan-in scaling (rather than a fixed tiny std) keeps feature
        magnitudes O(1) through the stack, which from-scratch training at
        desk scale needs to make any progress.
        """
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}

        def conv_init(name, out_c, in_c, k):
            fan = in_c * k * k
            p[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan), (out_c, in_c, k, k))
            p[f"{name}.b"] = np.zeros(out_c)

        conv_init("tau", 3, 7, 1)
        in_c = 3
        for i, block in enumerate(config.cfe):
            conv_init(f"cfe.{i}", block.out_channels, in_c, block.kernel)
            in_c = block.out_channels
        in_c = 3
        for i, block in enumerate(config.uer):
            conv_init(f"uer.{i}", block.out_channels, in_c, block.kernel)
            in_c = block.out_channels
        conv_init("fusion", config.fusion_channels, config.fusion_in_channels, 1)

        d0, d1 = config.fc_dims
        p["fc4.w"] = rng.normal(
            0.0, np.sqrt(2.0 / config.fc_in_dim), (d0, config.fc_in_dim)
        )
        p["fc4.b"] = np.zeros(d0)
        p["fc5.w"] = rng.normal(0.0, np.sqrt(2.0 / d0), (d1, d0))
        p["fc5.b"] = np.zeros(d1)
        for k in range(config.num_domains):
            p[f"fc6.{k}.w"] = rng.normal(0.0, 0.001, (2, d1))
            p[f"fc6.{k}.b"] = np.zeros(2)

        uee = None
        if config.ablation.use_uee:
            uee = make_uee(
                config.uee.channels, config.uee.kernel, config.uee.stride,
                config.uee.padding, config.uee.srm_params(),
                seed=int(rng.integers(0, 2**31)),
            )
        return cls(config, p, uee)

    def all_arrays(self) -> dict[str, np.ndarray]:
        """Trainable params plus frozen event-branch weights (checkpoint set)."""
        out = dict(self.params)
        if self.uee is not None:
            out.update(self.uee.parameter_arrays())
        return out

    def copy(self) -> "MCFRModel":
        params = {k: v.copy() for k, v in self.params.items()}
        uee = None
        if self.uee is not None:
            uee = UeeNetwork(
                layers=[replace(l, weights=l.weights.copy()) for l in self.uee.layers]
            )
        return MCFRModel(self.config, params, uee)

    def with_single_branch(self, seed: int = 0) -> "MCFRModel":
        """Tracking-time model: the k domain heads replaced by one fresh head."""
        cfg = replace(self.config, num_domains=1)
        rng = np.random.default_rng(seed)
        params = {
            k: v.copy() for k, v in self.params.items() if not k.startswith("fc6.")
        }
        params["fc6.0.w"] = rng.normal(0.0, 0.001, (2, cfg.fc_dims[1]))
        params["fc6.0.b"] = np.zeros(2)
        uee = None
        if self.uee is not None:
            uee = UeeNetwork(
                layers=[replace(l, weights=l.weights.copy()) for l in self.uee.layers]
            )
        return MCFRModel(cfg, params, uee)


def _blocks_forward(x, blocks, params, prefix):
    caches = []
    for i, spec in enumerate(blocks):
        w = params[f"{prefix}.{i}.w"]
        b = params[f"{prefix}.{i}.b"]
        x, conv_cache = conv2d_forward(x, w, b, spec.stride, spec.padding)
        x, mask = relu_forward(x)
        pool_cache = None
        if spec.pool:
            x, pool_cache = maxpool_forward(x, spec.pool, spec.pool_stride)
        caches.append((conv_cache, mask, pool_cache))
    return x, caches


def _blocks_backward(dy, blocks, caches, params, prefix, grads):
    for i in reversed(range(len(blocks))):
        conv_cache, mask, pool_cache = caches[i]
        if pool_cache is not None:
            dy = maxpool_backward(dy, pool_cache)
        dy = relu_backward(dy, mask)
        dy, dw, db = conv2d_backward(dy, conv_cache)
        grads[f"{prefix}.{i}.w"] = dw
        grads[f"{prefix}.{i}.b"] = db
    return dy


def channel_transform_tau(model: MCFRModel, x7: np.ndarray) -> np.ndarray:
    """Learned 1x1 projection of the 7-channel input to 3 channels."""
    if x7.shape[1] != 7:
        raise GeometryError(f"expected 7 input channels, got {x7.shape[1]}")
    y, _ = conv2d_forward(x7, model.params["tau.w"], model.params["tau.b"])
    return y


def cfe_forward(model: MCFRModel, x3: np.ndarray) -> np.ndarray:
    y, _ = _blocks_forward(x3, model.config.cfe, model.params, "cfe")
    return y


def uer_forward(model: MCFRModel, rgb: np.ndarray) -> np.ndarray:
    y, _ = _blocks_forward(rgb, model.config.uer, model.params, "uer")
    if y.shape[2:] != model.config.feature_hw:
        y, _ = adaptive_avgpool_forward(y, model.config.feature_hw)
    return y


def features_forward(model: MCFRModel, assembled: np.ndarray,
                     uee_feat: np.ndarray | None):
    """Branches + fusion; returns (flat features (N,D), cache).

    assembled is (N,7,S,S); uee_feat is (N,C,h,w) aligned to feature_hw and
    treated as a constant (no gradient flows into it).
    """
    cfg = model.config
    n = assembled.shape[0]
    if assembled.shape[1] != 7 or assembled.shape[2] != cfg.input_crop:
        raise GeometryError(
            f"assembled input must be (N,7,{cfg.input_crop},{cfg.input_crop})"
        )
    h, w = cfg.feature_hw
    pieces = []
    seg_channels = []
    cache: dict = {"n": n}

    if cfg.ablation.use_uee:
        if uee_feat is None:
            raise ConfigError("event branch enabled but uee_feat missing")
        if uee_feat.shape != (n, cfg.uee.channels[-1], h, w):
            raise GeometryError(
                f"uee_feat shape {uee_feat.shape} != "
                f"{(n, cfg.uee.channels[-1], h, w)}"
            )
        pieces.append(uee_feat)
        seg_channels.append(("uee", uee_feat.shape[1]))

    if cfg.ablation.use_cfe:
        tau_out, tau_cache = conv2d_forward(
            assembled, model.params["tau.w"], model.params["tau.b"]
        )
        cfe_out, cfe_caches = _blocks_forward(tau_out, cfg.cfe, model.params, "cfe")
        cache["tau"] = tau_cache
        cache["cfe"] = cfe_caches
        pieces.append(cfe_out)
        seg_channels.append(("cfe", cfe_out.shape[1]))

    if cfg.ablation.use_uer:
        rgb = assembled[:, :3]
        uer_out, uer_caches = _blocks_forward(rgb, cfg.uer, model.params, "uer")
        adapt_cache = None
        if uer_out.shape[2:] != (h, w):
            uer_out, adapt_cache = adaptive_avgpool_forward(uer_out, (h, w))
        cache["uer"] = uer_caches
        cache["uer_adapt"] = adapt_cache
        pieces.append(uer_out)
        seg_channels.append(("uer", uer_out.shape[1]))

    concat = np.concatenate(pieces, axis=1)
    cache["segments"] = seg_channels
    fused, fusion_cache = conv2d_forward(
        concat, model.params["fusion.w"], model.params["fusion.b"]
    )
    fused, fusion_mask = relu_forward(fused)
    cache["fusion"] = fusion_cache
    cache["fusion_mask"] = fusion_mask
    cache["fused_shape"] = fused.shape
    return fused.reshape(n, -1), cache


def classify_features(model: MCFRModel, feat: np.ndarray, domain: int):
    """fc4 -> fc5 -> fc6^domain on flat features; returns (logits, cache)."""
    if not 0 <= domain < model.config.num_domains:
        raise ConfigError(
            f"domain {domain} outside 0..{model.config.num_domains - 1}"
        )
    p = model.params
    h4, c4 = fc_forward(feat, p["fc4.w"], p["fc4.b"])
    h4, m4 = relu_forward(h4)
    h5, c5 = fc_forward(h4, p["fc5.w"], p["fc5.b"])
    h5, m5 = relu_forward(h5)
    logits, c6 = fc_forward(h5, p[f"fc6.{domain}.w"], p[f"fc6.{domain}.b"])
    return logits, {"c4": c4, "m4": m4, "c5": c5, "m5": m5, "c6": c6,
                    "domain": domain}


def backward_fc(model: MCFRModel, fc_cache: dict, dlogits: np.ndarray):
    """Gradients of the classification head; returns (grads, dfeat)."""
    p = model.params
    k = fc_cache["domain"]
    grads: dict[str, np.ndarray] = {}
    dh5, grads[f"fc6.{k}.w"], grads[f"fc6.{k}.b"] = fc_backward(
        dlogits, fc_cache["c6"], p[f"fc6.{k}.w"]
    )
    dh5 = relu_backward(dh5, fc_cache["m5"])
    dh4, grads["fc5.w"], grads["fc5.b"] = fc_backward(dh5, fc_cache["c5"], p["fc5.w"])
    dh4 = relu_backward(dh4, fc_cache["m4"])
    dfeat, grads["fc4.w"], grads["fc4.b"] = fc_backward(
        dh4, fc_cache["c4"], p["fc4.w"]
    )
    return grads, dfeat


def forward(model: MCFRModel, assembled, uee_feat, domain: int):
    feat, feat_cache = features_forward(model, assembled, uee_feat)
    logits, fc_cache = classify_features(model, feat, domain)
    return logits, {"feat": feat_cache, "fc": fc_cache}


def fuse_and_classify(model: MCFRModel, f_uee, f_cfe, f_uer, domain: int):
    """Score pre-computed branch outputs (concat -> fusion -> head).

    Branch arguments may be None when the matching flag is disabled; enabled
    ones are (N, C_b, h, w) and spatially aligned.
    """
    cfg = model.config
    pieces = []
    for flag, arr, name in (
        (cfg.ablation.use_uee, f_uee, "uee"),
        (cfg.ablation.use_cfe, f_cfe, "cfe"),
        (cfg.ablation.use_uer, f_uer, "uer"),
    ):
        if flag:
            if arr is None:
                raise ConfigError(f"branch {name} enabled but its features missing")
            pieces.append(arr)
    concat = np.concatenate(pieces, axis=1)
    if concat.shape[1] != cfg.fusion_in_channels:
        raise GeometryError(
            f"fusion expects {cfg.fusion_in_channels} channels, got {concat.shape[1]}"
        )
    fused, _ = conv2d_forward(concat, model.params["fusion.w"], model.params["fusion.b"])
    fused, _ = relu_forward(fused)
    logits, _ = classify_features(model, fused.reshape(concat.shape[0], -1), domain)
    return logits


def backward(model: MCFRModel, cache: dict, dlogits: np.ndarray):
    """Full-path gradients for every trainable parameter reached from the
    loss; the event branch receives none by construction."""
    cfg = model.config
    grads, dfeat = backward_fc(model, cache["fc"], dlogits)
    feat_cache = cache["feat"]
    dfused = dfeat.reshape(feat_cache["fused_shape"])
    dfused = relu_backward(dfused, feat_cache["fusion_mask"])
    dconcat, grads["fusion.w"], grads["fusion.b"] = conv2d_backward(
        dfused, feat_cache["fusion"]
    )
    offset = 0
    for name, width in feat_cache["segments"]:
        seg = dconcat[:, offset : offset + width]
        offset += width
        if name == "uee":
            continue  # frozen branch: gradient dropped
        if name == "cfe":
            dtau_out = _blocks_backward(
                seg, cfg.cfe, feat_cache["cfe"], model.params, "cfe", grads
            )
            _, grads["tau.w"], grads["tau.b"] = conv2d_backward(
                dtau_out, feat_cache["tau"]
            )
        elif name == "uer":
            if feat_cache["uer_adapt"] is not None:
                seg = adaptive_avgpool_backward(seg, feat_cache["uer_adapt"])
            _blocks_backward(
                seg, cfg.uer, feat_cache["uer"], model.params, "uer", grads
            )
    return grads


@dataclass
class TrainBatch:
    """Assembled inputs plus constant event-branch features and labels."""

    assembled: np.ndarray  # (N, 7, S, S)
    uee_feat: np.ndarray | None  # (N, C, h, w) or None when branch disabled
    labels: np.ndarray  # (N,) in {0 = background, 1 = target}


def default_sgd_config() -> SGDConfig:
    """Conv and fc4/fc5 at 1e-4, domain heads at 1e-3."""
    return SGDConfig(
        lr={"fc6": 1e-3},
        default_lr=1e-4,
        momentum=0.9,
        weight_decay=5e-4,
    )


def train_step(
    model: MCFRModel,
    batch: TrainBatch,
    domain: int,
    sgd_cfg: SGDConfig,
    sgd_state: SGDState,
    chunk: int = 64,
) -> float:
    """One SGD step on the batch for one domain; returns the loss.

    The batch is streamed through forward/backward in chunks to bound the
    im2col working set; gradients accumulate exactly as the mean over the
    whole batch.
    """
    n = batch.assembled.shape[0]
    if n == 0:
        raise ConfigError("empty training batch")
    total_loss = 0.0
    grads_acc: dict[str, np.ndarray] = {}
    for start in range(0, n, chunk):
        end = min(start + chunk, n)
        sl = slice(start, end)
        uee_sl = batch.uee_feat[sl] if batch.uee_feat is not None else None
        logits, cache = forward(model, batch.assembled[sl], uee_sl, domain)
        loss, ce_cache = softmax_ce_forward(logits, batch.labels[sl])
        dlogits = softmax_ce_backward(ce_cache)
        grads = backward(model, cache, dlogits)
        weight = (end - start) / n
        total_loss += loss * weight
        for k, g in grads.items():
            if k in grads_acc:
                grads_acc[k] += g * weight
            else:
                grads_acc[k] = g * weight
    sgd_step(model.params, grads_acc, sgd_cfg, sgd_state)
    return total_loss


def save_checkpoint(model: MCFRModel, path) -> None:
    """magic, u16 version, u32-length-prefixed canonical config JSON, then
    name/rank/dims/f32-data records sorted by parameter name."""
    arrays = model.all_arrays()
    blob = model.config.canonical_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in sorted(arrays):
            arr = arrays[name]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> MCFRModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    try:
        (version,) = struct.unpack_from("<H", data, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (cfg_len,) = struct.unpack_from("<I", data, 6)
        cfg_json = data[10 : 10 + cfg_len].decode("utf-8")
        config = MCFRConfig.from_dict(json.loads(cfg_json))
        pos = 10 + cfg_len
        arrays: dict[str, np.ndarray] = {}
        while pos < len(data):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            raw = data[pos : pos + 4 * count]
            if len(raw) != 4 * count:
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            pos += 4 * count
            arrays[name] = (
                np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
            )
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None

    # rebuild an initialized skeleton to know the expected names and shapes
    skeleton = MCFRModel.initialize(config, seed=0)
    expected = skeleton.all_arrays()
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter set mismatch (missing {missing}, extra {extra})"
        )
    for name, arr in arrays.items():
        if arr.shape != expected[name].shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: "
                f"{arr.shape} != {expected[name].shape}"
            )
    params = {k: arrays[k] for k in skeleton.params}
    uee = None
    if config.ablation.use_uee:
        uee = skeleton.uee
        for i, layer in enumerate(uee.layers):
            layer.weights = arrays[f"uee.{i}.w"]
    return MCFRModel(config, params, uee)
