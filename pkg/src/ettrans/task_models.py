"""Small per-task models: a per-frame trunk plus a task head.

The trunk maps raw channels to per-frame features through a two-layer
perceptron and one causal lag-mixing layer, so features carry temporal
context. Heads mirror the decoder forms used downstream, one task at a time.
Models are trained in stage 1 and frozen afterwards; a frozen model's
parameters must survive any later training bit-identical.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .errors import DimensionError
from .temporal_align import FrameSeq

MIX_KERNEL = 4

KIND_BINARY = "binary"
KIND_LOCALIZATION = "localization"
KIND_SEQUENCE = "sequence"
TASK_KINDS = (KIND_BINARY, KIND_LOCALIZATION, KIND_SEQUENCE)


@dataclass
class TaskModel:
    """One task's model. ``channels`` is the fixed input slice its trunk reads
    from a multichannel clip; everything outside that group is invisible to
    it, the way a face model never sees the audio track."""

    task_id: str
    kind: str
    native_fps: float
    native_window_s: float
    channels: tuple[int, ...]
    feature_dim: int
    params: nn.ParamSet
    frozen: bool = False
    stage1_complete: bool = False

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind: {self.kind!r}")
        if not self.channels:
            raise ValueError(f"model {self.task_id!r} needs at least one input channel")
        frames = self.native_fps * self.native_window_s
        if abs(frames - round(frames)) > 1e-9:
            raise ValueError(
                f"native window of {self.native_window_s} s at {self.native_fps} fps "
                "is not a whole number of frames"
            )

    @property
    def native_frames(self) -> int:
        return int(round(self.native_fps * self.native_window_s))

    def _input_tensor(self, window: FrameSeq) -> nn.Tensor:
        return nn.Tensor(window.values[:, list(self.channels)])

    def trunk_forward(self, window: FrameSeq) -> np.ndarray:
        """Per-frame features for one native-geometry window (no gradients)."""
        self._check_window(window)
        leaves = self.params.as_tensors(train=False)
        return trunk_graph(self._input_tensor(window), leaves).value

    def trunk_graph(self, window: FrameSeq, leaves: dict[str, nn.Tensor]) -> nn.Tensor:
        """Trunk forward as a graph node, for stage-1 training."""
        self._check_window(window)
        return trunk_graph(self._input_tensor(window), leaves)

    def head_forward(self, features, leaves: dict[str, nn.Tensor] | None = None):
        """Task prediction from per-frame features (logit, frame scores, or steps)."""
        if leaves is None:
            leaves = self.params.as_tensors(train=False)
        feats = nn.as_tensor(features)
        if feats.cols != self.feature_dim:
            raise DimensionError(
                f"head of {self.task_id!r} expects width {self.feature_dim}, "
                f"got {feats.cols}"
            )
        return head_graph(feats, leaves, self.kind)

    def _check_window(self, window: FrameSeq) -> None:
        if abs(window.fps - self.native_fps) > 1e-9 or window.n_frames != self.native_frames:
            raise DimensionError(
                f"model {self.task_id!r} expects {self.native_frames} frames at "
                f"{self.native_fps} fps, got {window.n_frames} at {window.fps}"
            )
        if window.n_channels <= max(self.channels):
            raise DimensionError(
                f"model {self.task_id!r} reads channels {self.channels}, "
                f"clip has only {window.n_channels}"
            )

    def checksum(self) -> str:
        return self.params.checksum()


def trunk_graph(x: nn.Tensor, leaves: dict[str, nn.Tensor]) -> nn.Tensor:
    h = nn.gelu(nn.linear(x, leaves["trunk/w1"], leaves["trunk/b1"]))
    h = nn.linear(h, leaves["trunk/w2"], leaves["trunk/b2"])
    return nn.causal_mix(h, leaves["trunk/mix"])


def head_graph(features: nn.Tensor, leaves: dict[str, nn.Tensor], kind: str):
    if kind == KIND_BINARY:
        pooled = nn.mean_rows(features)
        return nn.linear(pooled, leaves["head/w"], leaves["head/b"])
    if kind == KIND_LOCALIZATION:
        return nn.linear(features, leaves["head/w"], leaves["head/b"])
    if kind == KIND_SEQUENCE:
        pooled = nn.mean_rows(features)
        steps = []
        z = 0
        while f"head/step{z}/verb_w" in leaves:
            verb = nn.linear(pooled, leaves[f"head/step{z}/verb_w"], leaves[f"head/step{z}/verb_b"])
            noun = nn.linear(pooled, leaves[f"head/step{z}/noun_w"], leaves[f"head/step{z}/noun_b"])
            steps.append((verb, noun))
            z += 1
        return steps
    raise ValueError(f"unknown task kind: {kind!r}")


def init_task_model(
    task_id: str,
    kind: str,
    channels: tuple[int, ...],
    feature_dim: int,
    native_fps: float,
    native_window_s: float,
    rng: np.random.Generator,
    hidden: int = 16,
    horizon: int = 0,
    n_verbs: int = 0,
    n_nouns: int = 0,
    dtype=np.float64,
) -> TaskModel:
    def w(shape):
        return rng.normal(0.0, nn.WEIGHT_INIT_STD, size=shape).astype(dtype)

    params = nn.ParamSet()
    params.add("trunk/w1", w((len(channels), hidden)))
    params.add("trunk/b1", np.zeros(hidden, dtype=dtype))
    params.add("trunk/w2", w((hidden, feature_dim)))
    params.add("trunk/b2", np.zeros(feature_dim, dtype=dtype))
    mix = np.zeros(MIX_KERNEL, dtype=dtype)
    mix[0] = 1.0  # identity mixing at init
    params.add("trunk/mix", mix)

    if kind in (KIND_BINARY, KIND_LOCALIZATION):
        params.add("head/w", w((feature_dim, 1)))
        params.add("head/b", np.zeros(1, dtype=dtype))
    elif kind == KIND_SEQUENCE:
        if horizon < 1 or n_verbs < 1 or n_nouns < 1:
            raise ValueError("sequence task needs horizon, n_verbs and n_nouns >= 1")
        for z in range(horizon):
            params.add(f"head/step{z}/verb_w", w((feature_dim, n_verbs)))
            params.add(f"head/step{z}/verb_b", np.zeros(n_verbs, dtype=dtype))
            params.add(f"head/step{z}/noun_w", w((feature_dim, n_nouns)))
            params.add(f"head/step{z}/noun_b", np.zeros(n_nouns, dtype=dtype))
    else:
        raise ValueError(f"unknown task kind: {kind!r}")

    return TaskModel(
        task_id=task_id,
        kind=kind,
        native_fps=native_fps,
        native_window_s=native_window_s,
        channels=tuple(channels),
        feature_dim=feature_dim,
        params=params,
    )


def freeze(model: TaskModel) -> TaskModel:
    """Mark a model immutable: no optimizer may touch its parameters again.

    Freezing an untrained model is allowed (frozen-random ablations) but
    warns, since its features carry no learned signal.
    """
    if not model.stage1_complete and not model.frozen:
        warnings.warn(
            f"freezing {model.task_id!r} before stage-1 training completed; "
            "its features are random projections",
            RuntimeWarning,
            stacklevel=2,
        )
    model.frozen = True
    model.params.freeze_all()
    return model
