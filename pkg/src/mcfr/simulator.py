"""Event synthesis from frame sequences, exposure perturbation, and toy scenes.

The contrast-threshold model: every pixel keeps a reference log intensity.
Between consecutive frames the log intensity moves linearly; each time the
distance from the reference crosses the positive (upward) or negative
(downward) threshold, an event is emitted at the interpolated crossing time
and the reference advances by one threshold step. Because the per-pair path
is linear, a pixel emits only one polarity per frame pair.

Events are always synthesized from the clean frames; exposure perturbation
is applied to the frames afterwards, so the event stream keeps edges that
the over/under-exposed frames lose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, GeometryError
from .events import EventStream
from .frames import FrameSequence, to_luminance


@dataclass(frozen=True)
class SimConfig:
    """Contrast-threshold camera model parameters (log-intensity units)."""

    c_pos: float = 0.15
    c_neg: float = 0.15
    log_eps: float = 1.0
    threshold_noise_std: float = 0.0

    def __post_init__(self):
        if self.c_pos <= 0 or self.c_neg <= 0:
            raise ConfigError("contrast thresholds must be positive")
        if self.log_eps <= 0:
            raise ConfigError("log_eps must be positive")
        if self.threshold_noise_std < 0:
            raise ConfigError("threshold_noise_std must be >= 0")


@dataclass(frozen=True)
class ExposureConfig:
    """Multiplicative exposure gains, drawn log-uniformly per mode."""

    gain_range_under: tuple[float, float] = (0.125, 0.5)
    gain_range_over: tuple[float, float] = (2.0, 8.0)
    mode: Literal["under", "over", "random"] = "random"

    def __post_init__(self):
        for lo, hi in (self.gain_range_under, self.gain_range_over):
            if lo <= 0 or hi <= 0 or lo > hi:
                raise ConfigError("gain ranges must be positive with lo <= hi")


# Threshold jitter can make a per-pixel threshold arbitrarily small; clamp
# like real-sensor models do to keep event counts finite.
_MIN_THRESHOLD = 0.01


def frames_to_events(fs: FrameSequence, cfg: SimConfig, seed: int = 0) -> EventStream:
    """Simulate the threshold-crossing camera over a frame sequence.

    Deterministic under (inputs, seed). With threshold_noise_std = 0 the
    per-pixel accumulated event mass c_pos*N+ - c_neg*N- differs from the
    total log-intensity change by less than one threshold.
    """
    if len(fs) < 2:
        raise ConfigError("need at least 2 frames to simulate events")
    rng = np.random.default_rng(seed)
    h, w = fs.height, fs.width

    c_pos = np.full((h, w), cfg.c_pos)
    c_neg = np.full((h, w), cfg.c_neg)
    if cfg.threshold_noise_std > 0:
        c_pos = np.maximum(
            c_pos + rng.normal(0.0, cfg.threshold_noise_std, (h, w)), _MIN_THRESHOLD
        )
        c_neg = np.maximum(
            c_neg + rng.normal(0.0, cfg.threshold_noise_std, (h, w)), _MIN_THRESHOLD
        )

    log_frames = [np.log(to_luminance(f) + cfg.log_eps) for f in fs.frames]
    ref = log_frames[0].copy()

    ys_grid, xs_grid = np.mgrid[0:h, 0:w]
    chunks_t: list[np.ndarray] = []
    chunks_x: list[np.ndarray] = []
    chunks_y: list[np.ndarray] = []
    chunks_p: list[np.ndarray] = []

    for i in range(len(fs) - 1):
        ta, tb = fs.timestamps[i], fs.timestamps[i + 1]
        l0, l1 = log_frames[i], log_frames[i + 1]
        d = l1 - ref
        # crossing counts per pixel; epsilon keeps exact multiples stable
        n_pos = np.where(d > 0, np.floor(d / c_pos + 1e-9), 0).astype(np.int64)
        n_neg = np.where(d < 0, np.floor(-d / c_neg + 1e-9), 0).astype(np.int64)
        n_any = n_pos + n_neg  # disjoint: linear path has one direction
        total = int(n_any.sum())
        if total:
            mask = n_any > 0
            counts = n_any[mask]
            px = np.repeat(xs_grid[mask], counts)
            py = np.repeat(ys_grid[mask], counts)
            pol = np.repeat(np.where(n_pos[mask] > 0, 1, -1).astype(np.int8), counts)
            thr = np.repeat(
                np.where(n_pos[mask] > 0, c_pos[mask], c_neg[mask]), counts
            )
            # k-th crossing level sits (k+1) thresholds from the reference
            k = _ranges(counts)
            level_gap = (k + 1.0) * thr
            span = np.repeat((l1 - l0)[mask], counts)
            start_gap = np.repeat((ref - l0)[mask], counts)
            signed_gap = np.repeat(
                np.where(n_pos[mask] > 0, 1.0, -1.0), counts
            ) * level_gap + start_gap
            # span == 0 with events pending is float-fuzz territory; pin to
            # the end of the interval rather than dividing by zero
            safe_span = np.where(span == 0.0, 1.0, span)
            frac = np.where(span == 0.0, 1.0, signed_gap / safe_span)
            frac = np.clip(frac, 0.0, 1.0)
            t_ev = np.clip(
                np.rint(ta + frac * (tb - ta)).astype(np.int64), ta, tb - 1
            )
            order = np.lexsort((pol, px, py, t_ev))
            chunks_t.append(t_ev[order])
            chunks_x.append(px[order])
            chunks_y.append(py[order])
            chunks_p.append(pol[order])
        ref = ref + n_pos * c_pos - n_neg * c_neg

    if not chunks_t:
        return EventStream.empty(w, h)
    return EventStream(
        np.concatenate(chunks_t),
        np.concatenate(chunks_x),
        np.concatenate(chunks_y),
        np.concatenate(chunks_p),
        w,
        h,
    )


def _ranges(counts: np.ndarray) -> np.ndarray:
    """[0..c0-1, 0..c1-1, ...] for the per-pixel crossing indices."""
    total = int(counts.sum())
    out = np.arange(total, dtype=np.float64)
    out -= np.repeat(np.cumsum(counts) - counts, counts)
    return out


def perturb_exposure(
    fs: FrameSequence, cfg: ExposureConfig, seed: int = 0
) -> FrameSequence:
    """Per-frame multiplicative gain, clamped to the 8-bit range."""
    rng = np.random.default_rng(seed)
    out = []
    for frame in fs.frames:
        if cfg.mode == "under":
            lo, hi = cfg.gain_range_under
        elif cfg.mode == "over":
            lo, hi = cfg.gain_range_over
        else:
            lo, hi = (
                cfg.gain_range_under if rng.random() < 0.5 else cfg.gain_range_over
            )
        gain = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        scaled = np.clip(np.rint(frame.astype(np.float64) * gain), 0, 255)
        out.append(scaled.astype(np.uint8))
    return FrameSequence(frames=tuple(out), timestamps=fs.timestamps)


@dataclass(frozen=True)
class SceneSpec:
    """Moving bright rectangle over an optionally textured background."""

    width: int = 64
    height: int = 64
    object_w: int = 12
    object_h: int = 12
    frame_count: int = 60
    frame_interval_us: int = 33_333
    motion: Literal["linear", "sine"] = "linear"
    velocity: tuple[float, float] = (0.8, 0.0)  # px/frame, linear mode
    amplitude: float = 10.0  # px, sine mode (vertical)
    period: float = 30.0  # frames, sine mode
    drift: float = 1.0  # px/frame horizontal drift, sine mode
    background_texture: bool = True
    object_value: int = 230
    background_value: int = 40

    def __post_init__(self):
        if self.object_w > self.width or self.object_h > self.height:
            raise ConfigError("object larger than canvas")
        if self.frame_count < 1:
            raise ConfigError("frame_count must be >= 1")


def gen_synthetic_sequence(
    spec: SceneSpec, seed: int = 0
) -> tuple[FrameSequence, np.ndarray]:
    """Render the scene; returns (sequence, ground-truth boxes (N,4)).

    The rectangle is drawn at integer positions (rounded from the motion
    path) and the ground truth is exactly the drawn rectangle.
    """
    rng = np.random.default_rng(seed)
    w, h = spec.width, spec.height
    if spec.background_texture:
        # static blocky texture keeps edges for the tracker without per-frame noise
        coarse = rng.integers(
            max(0, spec.background_value - 25),
            min(255, spec.background_value + 25),
            size=(h // 4 + 1, w // 4 + 1),
        ).astype(np.uint8)
        background = np.kron(coarse, np.ones((4, 4), dtype=np.uint8))[:h, :w]
    else:
        background = np.full((h, w), spec.background_value, dtype=np.uint8)

    # two-tone object so the crop has interior structure, not just edges
    obj = np.full((spec.object_h, spec.object_w), spec.object_value, dtype=np.uint8)
    obj[: spec.object_h // 2, : spec.object_w // 2] = max(
        0, spec.object_value - 60
    )
    obj[spec.object_h // 2 :, spec.object_w // 2 :] = max(
        0, spec.object_value - 60
    )

    # start position leaves room for the full motion path
    x0 = 4.0
    y0 = (h - spec.object_h) / 2.0

    frames = []
    boxes = np.zeros((spec.frame_count, 4), dtype=np.float64)
    for i in range(spec.frame_count):
        if spec.motion == "linear":
            cx = x0 + spec.velocity[0] * i
            cy = y0 + spec.velocity[1] * i
        else:
            cx = x0 + spec.drift * i
            cy = y0 + spec.amplitude * math.sin(2.0 * math.pi * i / spec.period)
        xi = int(round(cx))
        yi = int(round(cy))
        xi = min(max(xi, 0), w - spec.object_w)
        yi = min(max(yi, 0), h - spec.object_h)
        frame = background.copy()
        frame[yi : yi + spec.object_h, xi : xi + spec.object_w] = obj
        frames.append(frame)
        boxes[i] = (xi, yi, spec.object_w, spec.object_h)

    timestamps = tuple(i * spec.frame_interval_us for i in range(spec.frame_count))
    return FrameSequence(frames=tuple(frames), timestamps=timestamps), boxes
