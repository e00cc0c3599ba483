"""Joint layouts and joint remapping tables."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from unik.tensor.core import ConfigError


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class JointLayout:
    name: str
    joint_names: Tuple[str, ...]
    center_index: int
    bone_pairs: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "bone_pairs", tuple((int(c), int(p)) for c, p in self.bone_pairs))
        self.validate()

    @property
    def V(self) -> int:
        return len(self.joint_names)

    def parents(self) -> List[int]:
        """Parent index per joint; the center is its own parent."""
        parent = [-1] * self.V
        parent[self.center_index] = self.center_index
        for child, par in self.bone_pairs:
            parent[child] = par
        return parent

    def validate(self) -> None:
        v = self.V
        if v < 1:
            raise LayoutError(f"layout {self.name!r} has no joints")
        if not 0 <= self.center_index < v:
            raise LayoutError(f"center index {self.center_index} out of range for {v} joints")
        children = set()
        for child, par in self.bone_pairs:
            if not (0 <= child < v and 0 <= par < v):
                raise LayoutError(f"bone ({child}, {par}) references a joint outside [0, {v})")
            if child == self.center_index:
                raise LayoutError(f"the center joint {child} cannot have a parent")
            if child in children:
                raise LayoutError(f"joint {child} has more than one parent")
            children.add(child)
        if len(children) != v - 1:
            missing = sorted(set(range(v)) - children - {self.center_index})
            raise LayoutError(f"joints {missing} have no parent bone")
        parent = self.parents()
        for j in range(v):
            seen = set()
            k = j
            while k != self.center_index:
                if k in seen:
                    raise LayoutError(f"bone pairs contain a cycle through joint {k}")
                seen.add(k)
                k = parent[k]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "joint_names": list(self.joint_names),
            "center_index": self.center_index,
            "bone_pairs": [list(p) for p in self.bone_pairs],
        }


def layout_from_json(obj: dict) -> JointLayout:
    if not isinstance(obj, dict):
        raise LayoutError("layout must be a JSON object")
    try:
        return JointLayout(
            name=str(obj["name"]),
            joint_names=[str(n) for n in obj["joint_names"]],
            center_index=int(obj["center_index"]),
            bone_pairs=[tuple(p) for p in obj["bone_pairs"]],
        )
    except KeyError as exc:
        raise LayoutError(f"layout is missing field {exc.args[0]!r}") from None


def load_layout(path: Union[str, Path]) -> JointLayout:
    """Load a layout file, or a built-in layout when ``path`` names one."""
    if str(path) in BUILTIN_LAYOUTS:
        return BUILTIN_LAYOUTS[str(path)]
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LayoutError(f"{path}: invalid JSON ({exc})") from None
    return layout_from_json(obj)


def save_layout(layout: JointLayout, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(layout.to_json(), fh, indent=2)


# 13 main-body joints produced by monocular 2D/3D pose estimators.
BODY13 = JointLayout(
    name="body13",
    joint_names=(
        "r_ankle", "l_ankle", "r_knee", "l_knee", "r_hip", "l_hip",
        "r_wrist", "l_wrist", "r_elbow", "l_elbow", "r_shoulder", "l_shoulder", "head",
    ),
    center_index=4,
    bone_pairs=(
        (0, 2), (2, 4), (1, 3), (3, 5), (5, 4),
        (10, 4), (11, 10), (12, 11),
        (8, 10), (6, 8), (9, 11), (7, 9),
    ),
)

# 17-joint layout used for real-world 2D data: body13 plus hip, chest, neck, nose.
UNIK17 = JointLayout(
    name="unik17",
    joint_names=(
        "hip", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
        "chest", "neck", "nose", "head",
        "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
    ),
    center_index=0,
    bone_pairs=(
        (1, 0), (2, 1), (3, 2), (4, 0), (5, 4), (6, 5),
        (7, 0), (8, 7), (9, 8), (10, 9),
        (11, 8), (12, 11), (13, 12), (14, 8), (15, 14), (16, 15),
    ),
)

# Kinect v2 skeleton; bones point away from the spine-shoulder joint.
NTU25 = JointLayout(
    name="ntu25",
    joint_names=(
        "spine_base", "spine_mid", "neck", "head",
        "l_shoulder", "l_elbow", "l_wrist", "l_hand",
        "r_shoulder", "r_elbow", "r_wrist", "r_hand",
        "l_hip", "l_knee", "l_ankle", "l_foot",
        "r_hip", "r_knee", "r_ankle", "r_foot",
        "spine_shoulder", "l_handtip", "l_thumb", "r_handtip", "r_thumb",
    ),
    center_index=20,
    bone_pairs=tuple(
        (c - 1, p - 1)
        for c, p in (
            (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
            (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
            (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
            (24, 25), (25, 12),
        )
    ),
)

BUILTIN_LAYOUTS: Dict[str, JointLayout] = {l.name: l for l in (BODY13, UNIK17, NTU25)}


# A mapping entry is a source index or a list of (source index, weight) pairs.
MappingEntry = Union[int, Sequence[Tuple[int, float]]]


def _idx(layout: JointLayout, name: str) -> int:
    return layout.joint_names.index(name)


def _body13_to_unik17() -> List[MappingEntry]:
    s = BODY13
    mid_hip = [(_idx(s, "l_hip"), 0.5), (_idx(s, "r_hip"), 0.5)]
    neck = [(_idx(s, "l_shoulder"), 0.5), (_idx(s, "r_shoulder"), 0.5)]
    table: Dict[str, MappingEntry] = {
        "hip": mid_hip,
        "neck": neck,
        "chest": [(i, w * 0.5) for i, w in mid_hip + neck],
        "nose": [(i, w * 0.5) for i, w in neck] + [(_idx(s, "head"), 0.5)],
    }
    return [table.get(n, _idx(s, n) if n in s.joint_names else None) for n in UNIK17.joint_names]


def _ntu25_to_unik17() -> List[MappingEntry]:
    s = NTU25
    # Kinect has no nose joint; the head joint stands in for it.
    names = {
        "hip": "spine_base", "chest": "spine_mid", "neck": "spine_shoulder", "nose": "head",
    }
    return [_idx(s, names.get(n, n)) for n in UNIK17.joint_names]


JOINT_MAPPINGS: Dict[Tuple[str, str], List[MappingEntry]] = {
    ("body13", "unik17"): _body13_to_unik17(),
    ("ntu25", "unik17"): _ntu25_to_unik17(),
}


def mapping_matrix(mapping: Sequence[MappingEntry], source_v: int):
    """Dense (V_out, V_in) weight matrix for a joint mapping, validated."""
    mat = np.zeros((len(mapping), source_v), dtype=np.float64)
    for out_j, entry in enumerate(mapping):
        if entry is None:
            raise ConfigError(f"output joint {out_j} has no source")
        if isinstance(entry, (int, np.integer)):
            entry = [(int(entry), 1.0)]
        total = 0.0
        for src, weight in entry:
            if not 0 <= int(src) < source_v:
                raise ConfigError(f"output joint {out_j} references source joint {src} outside [0, {source_v})")
            mat[out_j, int(src)] += float(weight)
            total += float(weight)
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"weights for output joint {out_j} sum to {total}, not 1")
    return mat
