"""Skeleton clips and the preprocessing applied before they reach the network."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from unik.data.layout import JointLayout, MappingEntry, mapping_matrix
from unik.tensor.core import ConfigError

DEFAULT_RESOLUTION = (640, 480)


class DataError(ValueError):
    """Malformed or inconsistent skeleton data."""


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """One labelled clip.

    ``persons`` has shape ``(M, T, V, C)``; C is 2 (image coordinates) or 3
    (metres).
    """

    id: str
    label: int
    persons: np.ndarray
    fps: Optional[float] = None
    resolution: Optional[Tuple[float, float]] = None
    layout: Optional[JointLayout] = None

    def __post_init__(self):
        arr = np.asarray(self.persons, dtype=np.float64)
        if arr.ndim != 4:
            raise DataError(f"clip {self.id!r}: persons must be (M, T, V, C), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"clip {self.id!r}: needs at least one person and one frame")
        if arr.shape[3] not in (2, 3):
            raise DataError(f"clip {self.id!r}: coordinates must be 2D or 3D, got C={arr.shape[3]}")
        if not np.isfinite(arr).all():
            raise DataError(f"clip {self.id!r}: non-finite coordinates")
        if self.layout is not None and arr.shape[2] != self.layout.V:
            raise DataError(f"clip {self.id!r}: {arr.shape[2]} joints but layout {self.layout.name!r} has {self.layout.V}")
        arr.setflags(write=False)
        object.__setattr__(self, "persons", arr)

    @property
    def M(self) -> int:
        return self.persons.shape[0]

    @property
    def T(self) -> int:
        return self.persons.shape[1]

    @property
    def V(self) -> int:
        return self.persons.shape[2]

    @property
    def C(self) -> int:
        return self.persons.shape[3]

    def with_persons(self, persons: np.ndarray, **changes) -> "SkeletonSequence":
        return replace(self, persons=persons, **changes)

    def frame(self, k: int) -> np.ndarray:
        return self.persons[:, k]


@dataclass
class DatasetSplit:
    sequences: List[SkeletonSequence]
    num_classes: int
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [str(i) for i in range(self.num_classes)]
        for seq in self.sequences:
            if not 0 <= seq.label < self.num_classes:
                raise DataError(f"clip {seq.id!r}: label {seq.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=np.int64)


# -- missing joints -----------------------------------------------------------


def impute_missing(persons: np.ndarray, center_index: int) -> np.ndarray:
    """Fill NaN joints by linear interpolation over time, else with the center joint.

    Frames before the first (after the last) valid observation hold the nearest
    valid value. Joints never observed take the center joint of the same frame,
    or zero when that is missing too.
    """
    out = np.array(persons, dtype=np.float64)
    m, t, v, c = out.shape
    frames = np.arange(t)
    for p in range(m):
        for j in range(v):
            valid = np.isfinite(out[p, :, j]).all(axis=-1)
            if valid.all() or not valid.any():
                continue
            for ax in range(c):
                out[p, ~valid, j, ax] = np.interp(frames[~valid], frames[valid], out[p, valid, j, ax])
        center = out[p, :, center_index]
        center = np.where(np.isfinite(center), center, 0.0)
        for j in range(v):
            bad = ~np.isfinite(out[p, :, j]).all(axis=-1)
            if bad.any():
                out[p, bad, j] = center[bad]
    return out


# -- preprocessing ------------------------------------------------------------


def _active_persons(persons: np.ndarray) -> np.ndarray:
    return np.abs(persons).reshape(persons.shape[0], -1).sum(axis=1) > 0


def normalize_center(
    seq: SkeletonSequence,
    center_index: Optional[int] = None,
    resolution: Optional[Tuple[float, float]] = None,
) -> SkeletonSequence:
    """Screen-normalise 2D clips and subtract the body center.

    2D: pixel coordinates go to ``[-1, 1]`` along the width (aspect ratio kept),
    then every frame is centered on its own center joint. 3D: the center joint of
    the first frame of the first person is subtracted from all frames. Persons
    that are entirely zero (absent) are left at zero.
    """
    if center_index is None:
        if seq.layout is None:
            raise ConfigError("normalize_center needs a layout or an explicit center index")
        center_index = seq.layout.center_index
    x = np.array(seq.persons)
    active = _active_persons(x)
    if seq.C == 2:
        res = resolution if resolution is not None else seq.resolution
        if res is None:
            raise ConfigError(f"clip {seq.id!r}: 2D normalisation needs the frame resolution")
        w, h = float(res[0]), float(res[1])
        x = x / w * 2.0 - np.array([1.0, h / w])
        x = x - x[:, :, center_index : center_index + 1, :]
    else:
        x = x - x[0, 0, center_index]
    x[~active] = 0.0
    return seq.with_persons(x)


def pad_replay(seq: SkeletonSequence, t_target: int) -> SkeletonSequence:
    """Extend a clip to ``t_target`` frames by replaying it: frame k <- frame k mod T."""
    if seq.T < 1:
        raise DataError("cannot replay an empty clip")
    if t_target < seq.T:
        raise DataError(f"target length {t_target} is shorter than the clip ({seq.T}); use sample_window")
    if t_target == seq.T:
        return seq
    idx = np.arange(t_target) % seq.T
    return seq.with_persons(seq.persons[:, idx])


def sample_window(seq: SkeletonSequence, t_sample: int, rng: np.random.Generator) -> SkeletonSequence:
    """A uniformly placed contiguous window of ``t_sample`` frames, replay-padded if the clip is short."""
    if t_sample < 1:
        raise ConfigError(f"window length must be >= 1, got {t_sample}")
    if seq.T <= t_sample:
        return pad_replay(seq, t_sample)
    start = int(rng.integers(0, seq.T - t_sample + 1))
    return seq.with_persons(seq.persons[:, start : start + t_sample])


def compute_bones(seq: SkeletonSequence, layout: Optional[JointLayout] = None) -> SkeletonSequence:
    """Bone stream: each joint holds (joint - parent); the center joint holds zero."""
    layout = layout or seq.layout
    if layout is None:
        raise ConfigError("compute_bones needs a joint layout")
    layout.validate()
    if layout.V != seq.V:
        raise DataError(f"layout {layout.name!r} has {layout.V} joints, clip has {seq.V}")
    x = seq.persons
    parent = np.array(layout.parents())
    bones = x - x[:, :, parent]
    return seq.with_persons(bones)


def remap_joints(
    seq: SkeletonSequence,
    mapping: Sequence[MappingEntry],
    layout: Optional[JointLayout] = None,
) -> SkeletonSequence:
    """Build a new joint set where each output joint is a source joint or a convex mix of them."""
    mat = mapping_matrix(mapping, seq.V)
    if layout is not None and layout.V != mat.shape[0]:
        raise ConfigError(f"mapping produces {mat.shape[0]} joints, layout {layout.name!r} has {layout.V}")
    selection = [e for e in mapping if isinstance(e, (int, np.integer))]
    if len(selection) == len(mapping):
        out = seq.persons[:, :, list(selection)]
    else:
        out = np.einsum("ov,mtvc->mtoc", mat, seq.persons)
        for j, entry in enumerate(mapping):
            if isinstance(entry, (int, np.integer)):
                out[:, :, j] = seq.persons[:, :, entry]
    return seq.with_persons(out, layout=layout)


def person_array(seq: SkeletonSequence, persons: int) -> np.ndarray:
    """``(M, C, T, V)`` network input for one clip; extra persons dropped, absent ones zero."""
    x = seq.persons[:persons]
    if x.shape[0] < persons:
        pad = np.zeros((persons - x.shape[0],) + x.shape[1:], dtype=x.dtype)
        x = np.concatenate([x, pad], axis=0)
    return x.transpose(0, 3, 1, 2)
