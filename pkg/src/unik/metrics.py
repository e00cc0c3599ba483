"""Classification metrics, score files and joint/bone score fusion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np


class ScoreError(ValueError):
    pass


@dataclass
class Metrics:
    top1: float
    top5: float
    mean_per_class: float
    per_class: np.ndarray
    confusion: np.ndarray

    def summary(self) -> str:
        return f"top1={self.top1:.4f} top5={self.top5:.4f} mean_per_class={self.mean_per_class:.4f}"


def compute_metrics(scores: np.ndarray, labels: Sequence[int], num_classes: int = None) -> Metrics:
    """Top-1/top-5, per-class and mean per-class accuracy from a (clips, classes) score matrix.

    Ties in the ranking are broken toward the lower class index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ScoreError("metrics need a non-empty (clips, classes) score matrix")
    if labels.shape != (scores.shape[0],):
        raise ScoreError(f"{labels.shape[0]} labels for {scores.shape[0]} score rows")
    num_classes = num_classes or scores.shape[1]
    order = np.argsort(-scores, axis=1, kind="stable")
    pred = order[:, 0]
    k = min(5, scores.shape[1])
    top5_hit = (order[:, :k] == labels[:, None]).any(axis=1)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    support = confusion.sum(axis=1)
    present = support > 0
    per_class = np.zeros(num_classes)
    per_class[present] = np.diag(confusion)[present] / support[present]
    return Metrics(
        top1=float((pred == labels).mean()),
        top5=float(top5_hit.mean()),
        mean_per_class=float(per_class[present].mean()),
        per_class=per_class,
        confusion=confusion,
    )


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def write_scores(path: Union[str, Path], clip_ids: Sequence[str], scores: np.ndarray, labels=None) -> None:
    """Score CSV: ``clip_id,p_0,...,p_{C-1}`` (plus ``label`` when labels are given)."""
    scores = np.asarray(scores)
    header = ["clip_id"] + [f"p_{i}" for i in range(scores.shape[1])]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, cid in enumerate(clip_ids):
            row = [cid] + [repr(float(p)) for p in scores[i]]
            if labels is not None:
                row.append(int(labels[i]))
            w.writerow(row)


def read_scores(path: Union[str, Path]) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """Returns clip ids, the score matrix, and labels (-1 where the file has none)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "clip_id":
        raise ScoreError(f"{path}: missing clip_id header")
    header = rows[0]
    has_label = header[-1] == "label"
    n_cls = len(header) - 1 - int(has_label)
    ids, scores, labels = [], [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ScoreError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[0])
        try:
            scores.append([float(v) for v in row[1 : 1 + n_cls]])
            labels.append(int(row[-1]) if has_label else -1)
        except ValueError as exc:
            raise ScoreError(f"{path}:{line_no}: {exc}") from None
    return ids, np.array(scores, dtype=np.float64).reshape(len(ids), n_cls), np.array(labels, dtype=np.int64)


def fuse_scores(
    ids_joint: Sequence[str],
    scores_joint: np.ndarray,
    ids_bone: Sequence[str],
    scores_bone: np.ndarray,
    atol: float = 1e-4,
) -> Tuple[List[str], np.ndarray]:
    """Sum of the two streams' softmax rows, aligned on clip id (joint-stream order)."""
    scores_joint = np.asarray(scores_joint, dtype=np.float64)
    scores_bone = np.asarray(scores_bone, dtype=np.float64)
    if scores_joint.shape[1:] != scores_bone.shape[1:]:
        raise ScoreError("joint and bone score files have different class counts")
    for name, ids, s in (("joint", ids_joint, scores_joint), ("bone", ids_bone, scores_bone)):
        bad = np.flatnonzero(np.abs(s.sum(axis=1) - 1.0) > atol)
        if bad.size:
            raise ScoreError(f"{name} scores for clip {ids[bad[0]]!r} do not sum to 1")
        if len(set(ids)) != len(ids):
            raise ScoreError(f"{name} scores list a clip more than once")
    bone_index: Dict[str, int] = {cid: i for i, cid in enumerate(ids_bone)}
    for cid in ids_joint:
        if cid not in bone_index:
            raise ScoreError(f"clip {cid!r} has joint scores but no bone scores")
    joint_set = set(ids_joint)
    for cid in ids_bone:
        if cid not in joint_set:
            raise ScoreError(f"clip {cid!r} has bone scores but no joint scores")
    aligned = scores_bone[[bone_index[c] for c in ids_joint]]
    return list(ids_joint), scores_joint + aligned


def fuse_two_stream(
    ids_joint: Sequence[str],
    scores_joint: np.ndarray,
    ids_bone: Sequence[str],
    scores_bone: np.ndarray,
    labels: Sequence[int],
) -> Metrics:
    """Metrics of the fused joint+bone prediction; ``labels`` follow the joint-stream order."""
    _, fused = fuse_scores(ids_joint, scores_joint, ids_bone, scores_bone)
    return compute_metrics(fused, labels, fused.shape[1])
