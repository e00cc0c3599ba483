"""JSON Lines dataset files.

One object per clip::

    {"id": "c0", "label": 3, "persons": [T x V x C nested lists, ...],
     "fps": 30.0, "resolution": [640, 480]}

``null`` marks a missing joint (or coordinate); those are imputed on load.
Class names live in a ``labels.json`` sidecar next to the data file.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from unik.data.layout import JointLayout
from unik.data.skeleton import DEFAULT_RESOLUTION, DatasetSplit, DataError, SkeletonSequence, impute_missing

LABELS_FILE = "labels.json"


def _reject_constant(token: str):
    raise ValueError(f"non-finite number {token}")


def _coords(value, line_no: int) -> np.ndarray:
    """Nested ``[person][frame][joint][coord]`` lists; ``null`` marks a missing coordinate or joint."""
    width = []

    def conv(v, depth):
        if v is None:
            return None if depth == 2 else math.nan
        if isinstance(v, list):
            if depth == 3:
                raise DataError(f"line {line_no}: persons nest deeper than [person][frame][joint][coord]")
            out = [conv(u, depth + 1) for u in v]
            if depth == 2:
                width.append(len(out))
            return out
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise DataError(f"line {line_no}: coordinate {v!r} is not a number")
        if not math.isfinite(v):
            raise DataError(f"line {line_no}: non-finite coordinate {v!r}")
        return float(v)

    if not isinstance(value, list):
        raise DataError(f"line {line_no}: persons must be a list")
    nested = [conv(p, 0) for p in value]
    c = width[0] if width else 2
    fill = [math.nan] * c
    for person in nested:
        if not isinstance(person, list):
            raise DataError(f"line {line_no}: persons must nest as [person][frame][joint][coord]")
        for frame in person:
            if isinstance(frame, list):
                frame[:] = [fill if j is None else j for j in frame]
    try:
        arr = np.array(nested, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"line {line_no}: ragged persons array ({exc})") from None
    if arr.ndim != 4:
        raise DataError(f"line {line_no}: persons must nest as [person][frame][joint][coord], got depth {arr.ndim}")
    return arr


def parse_line(text: str, line_no: int, layout: Optional[JointLayout], num_classes: Optional[int]) -> SkeletonSequence:
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except ValueError as exc:
        raise DataError(f"line {line_no}: {exc}") from None
    if not isinstance(obj, dict):
        raise DataError(f"line {line_no}: expected a JSON object")
    for key in ("id", "label", "persons"):
        if key not in obj:
            raise DataError(f"line {line_no}: missing field {key!r}")
    label = obj["label"]
    if isinstance(label, bool) or not isinstance(label, int) or label < 0:
        raise DataError(f"line {line_no}: label must be a non-negative integer, got {label!r}")
    if num_classes is not None and label >= num_classes:
        raise DataError(f"line {line_no}: label {label} >= number of classes {num_classes}")
    persons = _coords(obj["persons"], line_no)
    if persons.shape[0] < 1 or persons.shape[1] < 1:
        raise DataError(f"line {line_no}: clip has no persons or no frames")
    if layout is not None and persons.shape[2] != layout.V:
        raise DataError(f"line {line_no}: {persons.shape[2]} joints, layout {layout.name!r} has {layout.V}")
    if persons.shape[3] not in (2, 3):
        raise DataError(f"line {line_no}: coordinates must be 2D or 3D, got {persons.shape[3]}")
    if np.isnan(persons).any():
        center = layout.center_index if layout is not None else 0
        persons = impute_missing(persons, center)
    resolution = obj.get("resolution")
    if resolution is not None:
        if len(resolution) != 2 or min(resolution) <= 0:
            raise DataError(f"line {line_no}: resolution must be [width, height]")
        resolution = (float(resolution[0]), float(resolution[1]))
    elif persons.shape[3] == 2:
        resolution = DEFAULT_RESOLUTION
    fps = obj.get("fps")
    return SkeletonSequence(
        id=str(obj["id"]),
        label=label,
        persons=persons,
        fps=None if fps is None else float(fps),
        resolution=resolution,
        layout=layout,
    )


def read_labels(path: Union[str, Path]) -> Optional[List[str]]:
    side = Path(path).with_name(LABELS_FILE)
    if not side.exists():
        return None
    with open(side, encoding="utf-8") as fh:
        names = json.load(fh)
    if not isinstance(names, list):
        raise DataError(f"{side}: expected a JSON array of class names")
    return [str(n) for n in names]


def parse_dataset(
    path: Union[str, Path],
    layout: Optional[JointLayout] = None,
    num_classes: Optional[int] = None,
) -> DatasetSplit:
    """Read and validate a JSONL split. Errors name the offending line."""
    class_names = read_labels(path)
    if num_classes is None and class_names is not None:
        num_classes = len(class_names)
    sequences = []
    with open(path, encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            sequences.append(parse_line(text, line_no, layout, num_classes))
    if num_classes is None:
        num_classes = max((s.label for s in sequences), default=-1) + 1
    return DatasetSplit(sequences, num_classes, class_names or [])


def sequence_to_json(seq: SkeletonSequence) -> dict:
    obj = {"id": seq.id, "label": int(seq.label), "persons": seq.persons.tolist()}
    if seq.fps is not None:
        obj["fps"] = seq.fps
    if seq.resolution is not None:
        obj["resolution"] = list(seq.resolution)
    return obj


def write_dataset(split: DatasetSplit, path: Union[str, Path]) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for seq in split.sequences:
            fh.write(json.dumps(sequence_to_json(seq), separators=(",", ":")))
            fh.write("\n")
    with open(path.with_name(LABELS_FILE), "w", encoding="utf-8") as fh:
        json.dump(list(split.class_names), fh)
