"""Temporal alignment between a clip and a task model's native geometry.

A model trained on short windows at its own frame rate is applied to a longer
clip by (1) subsampling the clip down to the model's FPS, (2) planning sliding
windows of the model's native duration, (3) running the model per window and
(4) averaging per-frame features where windows overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentError,
    ClipTooShortError,
    ContractViolationError,
    UpsamplingUnsupportedError,
)

_FRAME_ALIGN_TOL = 1e-9


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def frame_count(fps: float, duration_s: float) -> int:
    return _round_half_up(fps * duration_s)


@dataclass
class FrameSeq:
    """An ordered stack of per-frame channel vectors at a fixed frame rate."""

    values: np.ndarray  # frames x channels
    fps: float
    duration_s: float

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise AlignmentError(f"frame values must be 2-d, got shape {self.values.shape}")
        if self.fps <= 0:
            raise AlignmentError(f"fps must be positive, got {self.fps}")
        expected = frame_count(self.fps, self.duration_s)
        if self.values.shape[0] != expected:
            raise AlignmentError(
                f"{self.values.shape[0]} frames but {self.fps} fps over "
                f"{self.duration_s} s implies {expected}"
            )

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.float64) / self.fps


@dataclass(frozen=True)
class WindowPlan:
    """Window offsets covering a clip: regular stride plus an end-aligned tail."""

    window_s: float
    stride_s: float
    fps: float
    duration_s: float
    offsets_s: tuple[float, ...]

    @property
    def n_windows(self) -> int:
        return len(self.offsets_s)

    @property
    def frames_per_window(self) -> int:
        return frame_count(self.fps, self.window_s)


@dataclass
class FeatureSequence:
    """Per-frame features from one task model over a whole clip.

    Values are float32, the interchange precision of the on-disk feature
    cache; timestamps stay float64.
    """

    task_id: str
    values: np.ndarray  # frames x feature_dim, float32
    frame_times_s: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.frame_times_s = np.asarray(self.frame_times_s, dtype=np.float64)
        if self.values.ndim != 2:
            raise AlignmentError(f"feature values must be 2-d, got shape {self.values.shape}")
        if self.frame_times_s.shape != (self.values.shape[0],):
            raise AlignmentError(
                f"{self.values.shape[0]} feature rows but "
                f"{self.frame_times_s.shape[0]} timestamps"
            )
        if self.values.shape[0] > 1 and not np.all(np.diff(self.frame_times_s) > 0):
            raise AlignmentError("timestamps must be strictly increasing")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.values.shape[1]


def resample(clip: FrameSeq, target_fps: float) -> FrameSeq:
    """Subsample a clip to a lower frame rate by nearest source index.

    Frame j of the output comes from source index round(j * source/target),
    clamped into range. Duration is preserved; upsampling is refused.
    """
    if target_fps <= 0:
        raise AlignmentError(f"target fps must be positive, got {target_fps}")
    if target_fps > clip.fps:
        raise UpsamplingUnsupportedError(
            f"cannot resample {clip.fps} fps up to {target_fps} fps"
        )
    n_out = frame_count(target_fps, clip.duration_s)
    ratio = clip.fps / target_fps
    idx = np.array(
        [min(_round_half_up(j * ratio), clip.n_frames - 1) for j in range(n_out)],
        dtype=np.intp,
    )
    return FrameSeq(clip.values[idx].copy(), fps=target_fps, duration_s=clip.duration_s)


def _check_frame_aligned(name: str, seconds: float, fps: float) -> None:
    frames = seconds * fps
    if abs(frames - round(frames)) > _FRAME_ALIGN_TOL * max(1.0, abs(frames)):
        raise AlignmentError(
            f"{name}={seconds} s is not a whole number of frames at {fps} fps"
        )


def plan_windows(duration_s: float, window_s: float, stride_s: float, fps: float) -> WindowPlan:
    """Plan window start offsets so their union covers the full clip."""
    if fps <= 0:
        raise AlignmentError(f"fps must be positive, got {fps}")
    if stride_s <= 0:
        raise AlignmentError(f"stride must be positive, got {stride_s}")
    if window_s <= 0:
        raise AlignmentError(f"window must be positive, got {window_s}")
    if window_s > duration_s:
        raise ClipTooShortError(
            f"window of {window_s} s does not fit a {duration_s} s clip"
        )
    if stride_s > window_s and window_s < duration_s:
        # an inter-window gap would leave frames uncovered
        raise AlignmentError(
            f"stride {stride_s} s exceeds window {window_s} s; coverage impossible"
        )
    for name, value in (("duration_s", duration_s), ("window_s", window_s), ("stride_s", stride_s)):
        _check_frame_aligned(name, value, fps)

    # Work on integer frame counts so offsets stay exactly frame-aligned.
    dur_f = frame_count(fps, duration_s)
    win_f = frame_count(fps, window_s)
    stride_f = frame_count(fps, stride_s)
    offsets_f = list(range(0, dur_f - win_f + 1, stride_f))
    if offsets_f[-1] + win_f < dur_f:
        offsets_f.append(dur_f - win_f)
    offsets = tuple(o / fps for o in offsets_f)
    return WindowPlan(
        window_s=window_s,
        stride_s=stride_s,
        fps=fps,
        duration_s=duration_s,
        offsets_s=offsets,
    )


def extract_features(clip: FrameSeq, model, plan: WindowPlan, pooling: str = "per_frame") -> FeatureSequence:
    """Run a frozen model's trunk over each planned window and merge outputs.

    ``per_frame`` pooling keeps one feature row per clip frame, averaging
    rows that fall in several windows. ``per_window`` keeps one mean-pooled
    row per window instead (timestamped at the window center).
    """
    if abs(clip.fps - plan.fps) > _FRAME_ALIGN_TOL:
        raise AlignmentError(f"clip at {clip.fps} fps but plan was made for {plan.fps} fps")
    if abs(model.native_fps - plan.fps) > _FRAME_ALIGN_TOL:
        raise AlignmentError(
            f"model {model.task_id!r} runs at {model.native_fps} fps, plan is {plan.fps} fps"
        )
    if abs(model.native_window_s - plan.window_s) > _FRAME_ALIGN_TOL:
        raise AlignmentError(
            f"model {model.task_id!r} expects {model.native_window_s} s windows, "
            f"plan uses {plan.window_s} s"
        )
    if not model.frozen:
        raise ContractViolationError(
            f"model {model.task_id!r} must be frozen before feature extraction"
        )
    if pooling not in ("per_frame", "per_window"):
        raise ValueError(f"unknown pooling mode: {pooling!r}")

    win_f = plan.frames_per_window
    times = clip.frame_times()
    window_rows = []
    window_starts = []
    for offset_s in plan.offsets_s:
        start = frame_count(plan.fps, offset_s)
        window = FrameSeq(
            clip.values[start : start + win_f],
            fps=plan.fps,
            duration_s=plan.window_s,
        )
        feats = np.asarray(model.trunk_forward(window), dtype=np.float64)
        if feats.shape[0] != win_f:
            raise AlignmentError(
                f"trunk returned {feats.shape[0]} rows for a {win_f}-frame window"
            )
        window_rows.append(feats)
        window_starts.append(start)

    if pooling == "per_window":
        pooled = np.stack([w.mean(axis=0) for w in window_rows])
        centers = np.array(
            [times[s] + 0.5 * (win_f - 1) / plan.fps for s in window_starts]
        )
        return FeatureSequence(model.task_id, pooled.astype(np.float32), centers)

    dim = window_rows[0].shape[1]
    total = np.zeros((clip.n_frames, dim), dtype=np.float64)
    counts = np.zeros(clip.n_frames, dtype=np.int64)
    for start, feats in zip(window_starts, window_rows):
        total[start : start + win_f] += feats
        counts[start : start + win_f] += 1
    if np.any(counts == 0):
        raise AlignmentError("window plan leaves frames uncovered")
    merged = total / counts[:, None]
    return FeatureSequence(model.task_id, merged.astype(np.float32), times)
