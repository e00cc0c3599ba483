"""Training, evaluation and linear-probe workflows."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from unik.checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_pretrained_partial,
    network_from_checkpoint,
    save_checkpoint,
)
from unik.data.io import parse_dataset
from unik.data.layout import JointLayout, load_layout
from unik.data.skeleton import (
    DataError,
    DatasetSplit,
    SkeletonSequence,
    compute_bones,
    normalize_center,
    pad_replay,
    person_array,
    sample_window,
)
from unik.metrics import Metrics, compute_metrics, softmax_np
from unik.net import DEFAULT_CHANNELS, DEFAULT_DILATIONS, NetworkConfig, UnikNet, build_network
from unik.nn import Linear
from unik.tensor import ops
from unik.tensor.core import ConfigError, Tensor, no_grad
from unik.tensor.optim import SGD, step_lr

log = logging.getLogger(__name__)

CURVE_HEADER = ["epoch", "lr", "train_loss", "train_top1", "val_top1", "val_top5", "val_mpc"]
MIN_EVAL_FRAMES = 4


@dataclass
class TrainConfig:
    train_data: str = ""
    val_data: str = ""
    layout: str = "unik17"
    stream: str = "joint"
    epochs: int = 50
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_epochs: Tuple[int, ...] = (30, 40)
    decay_factor: float = 0.1
    batch_size: int = 16
    T_sample: int = 150
    seed: int = 0
    mode: str = "scratch"
    init_checkpoint: str = ""
    out_dir: str = "runs"
    channels: Tuple[int, ...] = DEFAULT_CHANNELS
    dilations: Tuple[int, ...] = DEFAULT_DILATIONS
    N: int = 3
    tau: int = 1
    t: int = 9
    persons: int = 1
    max_eval_T: int = 1200
    early_stop_top1: float = 0.0

    def validate(self) -> None:
        if self.stream not in ("joint", "bone"):
            raise ConfigError(f"stream must be 'joint' or 'bone', got {self.stream!r}")
        if self.mode not in ("scratch", "finetune", "probe"):
            raise ConfigError(f"mode must be scratch, finetune or probe, got {self.mode!r}")
        if self.mode in ("finetune", "probe") and not self.init_checkpoint:
            raise ConfigError(f"{self.mode} mode needs init_checkpoint")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ConfigError(f"decay_epochs must be strictly increasing: {self.decay_epochs}")
        if self.decay_epochs and self.epochs and self.decay_epochs[-1] >= self.epochs:
            raise ConfigError(f"decay epochs {self.decay_epochs} must lie before epoch {self.epochs}")
        if self.batch_size < 1 or self.T_sample < 1:
            raise ConfigError("batch_size and T_sample must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")

    def network_config(self, V: int, C_in: int, num_classes: int) -> NetworkConfig:
        return NetworkConfig(
            V=V, C_in=C_in, num_classes=num_classes, channels=tuple(self.channels),
            dilations=tuple(self.dilations), t=self.t, N=self.N, tau=self.tau, persons=self.persons,
        )


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        return raw.lower() in ("1", "true", "yes")
    if kind in (int, float, str):
        return kind(raw)
    # tuple of ints
    return tuple(int(v) for v in raw.replace("[", "").replace("]", "").split(",") if v.strip())


def parse_config_text(text: str) -> TrainConfig:
    """``key = value`` lines; ``#`` starts a comment; lists are comma separated."""
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    type_map = {"str": str, "int": int, "float": float, "bool": bool}
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        try:
            values[key] = _parse_value(raw, type_map.get(kinds[key], tuple))
        except ValueError:
            raise ConfigError(f"config line {line_no}: bad value for {key!r}: {raw!r}") from None
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def load_config(path: Union[str, Path]) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# -- data preparation -----------------------------------------------------------


def prepare(seq: SkeletonSequence, layout: JointLayout, stream: str = "joint") -> SkeletonSequence:
    """Normalise and center a clip, then derive bones for the bone stream."""
    seq = normalize_center(seq, center_index=layout.center_index)
    if stream == "bone":
        seq = compute_bones(seq, layout)
    return seq


def prepare_split(split: DatasetSplit, layout: JointLayout, stream: str = "joint") -> List[SkeletonSequence]:
    return [prepare(s, layout, stream) for s in split.sequences]


def batch_array(clips: Sequence[SkeletonSequence], persons: int, dtype=np.float32) -> np.ndarray:
    """Stack equal-length clips into a ``(B, M, C, T, V)`` array."""
    return np.stack([person_array(c, persons) for c in clips]).astype(dtype)


def eval_clip(seq: SkeletonSequence, max_t: int) -> SkeletonSequence:
    """Full-length test clip: cropped to ``max_t`` frames, replay-padded below the minimum."""
    if seq.T > max_t:
        seq = seq.with_persons(seq.persons[:, :max_t])
    if seq.T < MIN_EVAL_FRAMES:
        seq = pad_replay(seq, MIN_EVAL_FRAMES)
    return seq


def _length_batches(clips: Sequence[SkeletonSequence], batch_size: int) -> List[List[int]]:
    by_len: Dict[int, List[int]] = {}
    for i, c in enumerate(clips):
        by_len.setdefault(c.T, []).append(i)
    out = []
    for t in sorted(by_len):
        idx = by_len[t]
        out += [idx[i : i + batch_size] for i in range(0, len(idx), batch_size)]
    return out


def predict_logits(
    net: UnikNet,
    clips: Sequence[SkeletonSequence],
    batch_size: int = 16,
    max_t: int = 1200,
    features: bool = False,
) -> np.ndarray:
    """Eval-mode logits (or pooled features) for every clip, in input order."""
    net.eval()
    clips = [eval_clip(c, max_t) for c in clips]
    width = net.cfg.feature_dim if features else net.cfg.num_classes
    out = np.zeros((len(clips), width), dtype=np.float32)
    with no_grad():
        for idx in _length_batches(clips, batch_size):
            x = Tensor(batch_array([clips[i] for i in idx], net.cfg.persons))
            y = net.features(x) if features else net(x)
            out[idx] = y.data
    return out


def evaluate_network(
    net: UnikNet,
    clips: Sequence[SkeletonSequence],
    num_classes: int,
    batch_size: int = 16,
    max_t: int = 1200,
) -> Tuple[Metrics, np.ndarray]:
    if not clips:
        raise DataError("cannot evaluate an empty split")
    scores = softmax_np(predict_logits(net, clips, batch_size, max_t).astype(np.float64))
    labels = [c.label for c in clips]
    return compute_metrics(scores, labels, num_classes), scores


def evaluate(
    checkpoint: Union[str, Path, Checkpoint],
    dataset: DatasetSplit,
    layout: JointLayout,
    stream: str = "joint",
    batch_size: int = 16,
    max_t: int = 1200,
) -> Tuple[Metrics, np.ndarray]:
    """Deterministic metrics and per-clip softmax scores of a checkpoint on a split."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    if ckpt.config.V != layout.V:
        raise DataError(f"checkpoint expects {ckpt.config.V} joints, layout has {layout.V}")
    net = network_from_checkpoint(ckpt)
    clips = prepare_split(dataset, layout, stream)
    return evaluate_network(net, clips, max(dataset.num_classes, ckpt.config.num_classes), batch_size, max_t)


# -- training -----------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_top1: float
    val_top1: Optional[float] = None
    val_top5: Optional[float] = None
    val_mpc: Optional[float] = None

    def row(self) -> List[str]:
        def fmt(v):
            return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)

        return [fmt(getattr(self, k)) for k in CURVE_HEADER]


def write_curve(path: Union[str, Path], records: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for r in records:
            w.writerow(r.row())


@dataclass
class TrainResult:
    net: UnikNet
    curve: List[EpochRecord]
    checkpoint_path: Path
    best_checkpoint_path: Path
    curve_path: Path
    metrics: Optional[Metrics] = None
    seconds: float = 0.0


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train_epoch(
    net: UnikNet,
    opt: SGD,
    clips: Sequence[SkeletonSequence],
    batch_size: int,
    t_sample: int,
    rng: np.random.Generator,
) -> Tuple[float, float]:
    """One pass over shuffled, freshly windowed clips. Returns (mean loss, running top-1)."""
    net.train()
    order = rng.permutation(len(clips))
    total_loss = 0.0
    correct = 0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        batch = [sample_window(clips[i], t_sample, rng) for i in idx]
        x = Tensor(batch_array(batch, net.cfg.persons))
        labels = np.array([clips[i].label for i in idx])
        logits = net(x)
        loss = ops.cross_entropy(logits, labels)
        opt.zero_grad()
        loss.backward()
        opt.step()
        total_loss += loss.item() * len(idx)
        correct += int((logits.data.argmax(axis=1) == labels).sum())
    return total_loss / len(clips), correct / len(clips)


def _load_split(path: str, layout: JointLayout, stream: str) -> Tuple[DatasetSplit, List[SkeletonSequence]]:
    split = parse_dataset(path, layout)
    if not split.sequences:
        raise DataError(f"{path}: no clips")
    return split, prepare_split(split, layout, stream)


def train(
    cfg: TrainConfig,
    train_split: Optional[DatasetSplit] = None,
    val_split: Optional[DatasetSplit] = None,
    layout: Optional[JointLayout] = None,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Train from scratch, fine-tune, or linear-probe according to ``cfg.mode``.

    Splits may be passed in directly; otherwise they are read from the paths in
    ``cfg``. Writes ``final.ckpt``, ``best.ckpt`` (on every validation
    improvement) and ``curve.csv`` into ``cfg.out_dir``.
    """
    cfg.validate()
    layout = layout or load_layout(cfg.layout)
    if train_split is None:
        train_split = parse_dataset(cfg.train_data, layout)
    if val_split is None and cfg.val_data:
        val_split = parse_dataset(cfg.val_data, layout)
    for split in (train_split, val_split):
        if split is not None and split.sequences and split.sequences[0].V != layout.V:
            raise DataError(f"dataset has {split.sequences[0].V} joints, layout {layout.name!r} has {layout.V}")
    if not train_split.sequences:
        raise DataError("training split is empty")
    if cfg.mode == "probe":
        return _train_probe(cfg, train_split, val_split, layout, progress)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = prepare_split(train_split, layout, cfg.stream)
    val_clips = prepare_split(val_split, layout, cfg.stream) if val_split is not None else None
    num_classes = max(train_split.num_classes, val_split.num_classes if val_split else 0)
    net_cfg = cfg.network_config(layout.V, clips[0].C, num_classes)
    if cfg.mode == "finetune":
        net = load_pretrained_partial(cfg.init_checkpoint, net_cfg, "backbone_only", seed=cfg.seed).net
    else:
        net = build_network(net_cfg, seed=cfg.seed)

    opt = SGD(net.parameters(), lr=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
              decay_epochs=cfg.decay_epochs, decay_factor=cfg.decay_factor)
    final_path = out_dir / "final.ckpt"
    best_path = out_dir / "best.ckpt"
    curve_path = out_dir / "curve.csv"
    save_checkpoint(net, best_path, epoch=0, seed=cfg.seed)
    best = -1.0
    curve: List[EpochRecord] = []
    metrics = None
    started = time.time()
    for epoch in range(cfg.epochs):
        lr = opt.set_epoch(epoch)
        loss, acc = train_epoch(net, opt, clips, cfg.batch_size, cfg.T_sample, epoch_rng(cfg.seed, epoch))
        rec = EpochRecord(epoch + 1, lr, loss, acc)
        score = acc
        if val_clips is not None:
            metrics, _ = evaluate_network(net, val_clips, num_classes, cfg.batch_size, cfg.max_eval_T)
            rec.val_top1, rec.val_top5, rec.val_mpc = metrics.top1, metrics.top5, metrics.mean_per_class
            score = metrics.top1
        curve.append(rec)
        write_curve(curve_path, curve)
        if score > best:
            best = score
            save_checkpoint(net, best_path, epoch=epoch + 1, seed=cfg.seed)
        log.info("epoch %d lr %.4g loss %.4f train_top1 %.4f val_top1 %s", rec.epoch, lr, loss, acc, rec.val_top1)
        if progress is not None:
            progress(rec)
        if cfg.early_stop_top1 and rec.val_top1 is not None and rec.val_top1 >= cfg.early_stop_top1:
            break
    write_curve(curve_path, curve)
    save_checkpoint(net, final_path, epoch=len(curve), seed=cfg.seed)
    return TrainResult(net, curve, final_path, best_path, curve_path, metrics, time.time() - started)


# -- linear probe --------------------------------------------------------------------


@dataclass
class ProbeResult:
    metrics: Metrics
    train_metrics: Metrics
    head: Linear
    net: UnikNet
    trainable_params: int
    checkpoint_path: Optional[Path] = None


def fit_linear_head(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    epochs: int,
    lr0: float = 0.1,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    decay_epochs: Sequence[int] = (),
    decay_factor: float = 0.1,
    batch_size: int = 16,
    seed: int = 0,
) -> Linear:
    """SGD on a linear classifier over fixed features."""
    head = Linear(features.shape[1], num_classes, np.random.default_rng([seed, 1]))
    opt = SGD(head.parameters(), lr=lr0, momentum=momentum, weight_decay=weight_decay,
              decay_epochs=decay_epochs, decay_factor=decay_factor)
    feats = features.astype(np.float32)
    for epoch in range(epochs):
        opt.set_epoch(epoch)
        order = epoch_rng(seed, epoch).permutation(len(feats))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            loss = ops.cross_entropy(head(Tensor(feats[idx])), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return head


def head_scores(head: Linear, features: np.ndarray) -> np.ndarray:
    with no_grad():
        logits = head(Tensor(features.astype(np.float32))).data
    return softmax_np(logits.astype(np.float64))


def linear_probe(
    backbone: Union[str, Path, Checkpoint, UnikNet],
    train_clips: Sequence[SkeletonSequence],
    num_classes: int,
    epochs: int,
    val_clips: Optional[Sequence[SkeletonSequence]] = None,
    lr0: float = 0.1,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    decay_epochs: Sequence[int] = (),
    decay_factor: float = 0.1,
    batch_size: int = 16,
    seed: int = 0,
    max_t: int = 1200,
) -> ProbeResult:
    """Train a fresh classifier on frozen pooled features (extracted once, eval mode).

    Clips must already be preprocessed. Metrics are reported on ``val_clips``
    when given, else on the training clips.
    """
    if isinstance(backbone, UnikNet):
        src = backbone
    else:
        ckpt = backbone if isinstance(backbone, Checkpoint) else load_checkpoint(backbone)
        src = network_from_checkpoint(ckpt)
    if not train_clips:
        raise DataError("cannot probe on an empty split")
    train_feats = predict_logits(src, train_clips, batch_size, max_t, features=True)
    labels = np.array([c.label for c in train_clips])
    head = fit_linear_head(train_feats, labels, num_classes, epochs, lr0, momentum, weight_decay,
                           decay_epochs, decay_factor, batch_size, seed)
    train_metrics = compute_metrics(head_scores(head, train_feats), labels, num_classes)
    metrics = train_metrics
    if val_clips:
        val_feats = predict_logits(src, val_clips, batch_size, max_t, features=True)
        metrics = compute_metrics(head_scores(head, val_feats), [c.label for c in val_clips], num_classes)
    # a full network carrying the frozen backbone and the new head
    net = build_network(src.cfg.with_classes(num_classes), seed=seed)
    state = src.state()
    net.load_state(state, [n for n in net.state() if not n.startswith("classifier.")])
    net.classifier.weight.data[...] = head.weight.data
    net.classifier.bias.data[...] = head.bias.data
    trainable = sum(p.size for p in head.parameters())
    return ProbeResult(metrics, train_metrics, head, net, trainable)


def _train_probe(cfg, train_split, val_split, layout, progress) -> TrainResult:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = prepare_split(train_split, layout, cfg.stream)
    val_clips = prepare_split(val_split, layout, cfg.stream) if val_split is not None else None
    num_classes = max(train_split.num_classes, val_split.num_classes if val_split else 0)
    ckpt = load_checkpoint(cfg.init_checkpoint)
    if ckpt.config.V != layout.V:
        raise DataError(f"checkpoint expects {ckpt.config.V} joints, layout has {layout.V}")
    started = time.time()
    result = linear_probe(ckpt, clips, num_classes, cfg.epochs, val_clips, cfg.lr0, cfg.momentum,
                          cfg.weight_decay, cfg.decay_epochs, cfg.decay_factor, cfg.batch_size,
                          cfg.seed, cfg.max_eval_T)
    final_path = out_dir / "final.ckpt"
    save_checkpoint(result.net, final_path, epoch=cfg.epochs, seed=cfg.seed)
    m = result.metrics
    rec = EpochRecord(cfg.epochs, step_lr(max(cfg.epochs - 1, 0), cfg.lr0, cfg.decay_epochs, cfg.decay_factor),
                      float("nan"), result.train_metrics.top1,
                      m.top1 if val_clips else None, m.top5 if val_clips else None,
                      m.mean_per_class if val_clips else None)
    curve = [rec] if cfg.epochs else []
    curve_path = out_dir / "curve.csv"
    write_curve(curve_path, curve)
    if progress is not None and curve:
        progress(rec)
    return TrainResult(result.net, curve, final_path, final_path, curve_path, m, time.time() - started)


# -- synthetic data ---------------------------------------------------------------------


def synth(spec, out_dir: Union[str, Path], name: str = "data.jsonl") -> Path:
    """Generate a synthetic split and write ``<out_dir>/<name>`` plus ``labels.json`` and ``layout.json``."""
    from unik.data.io import write_dataset
    from unik.data.layout import save_layout
    from unik.data.synth import synth_generate, synth_layout

    spec.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / name
        write_dataset(synth_generate(spec), path)
        save_layout(synth_layout(spec), out_dir / "layout.json")
    except OSError as exc:
        raise DataError(f"cannot write synthetic data to {out_dir}: {exc}") from None
    return path
