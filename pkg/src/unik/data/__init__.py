from unik.data.io import parse_dataset, write_dataset
from unik.data.layout import (
    BODY13,
    BUILTIN_LAYOUTS,
    JOINT_MAPPINGS,
    NTU25,
    UNIK17,
    JointLayout,
    LayoutError,
    load_layout,
    save_layout,
)
from unik.data.skeleton import (
    DataError,
    DatasetSplit,
    SkeletonSequence,
    compute_bones,
    impute_missing,
    normalize_center,
    pad_replay,
    person_array,
    remap_joints,
    sample_window,
)
from unik.data.synth import SynthSpec, synth_generate

__all__ = [
    "parse_dataset",
    "write_dataset",
    "BODY13",
    "BUILTIN_LAYOUTS",
    "JOINT_MAPPINGS",
    "NTU25",
    "UNIK17",
    "JointLayout",
    "LayoutError",
    "load_layout",
    "save_layout",
    "DataError",
    "DatasetSplit",
    "SkeletonSequence",
    "compute_bones",
    "impute_missing",
    "normalize_center",
    "pad_replay",
    "person_array",
    "remap_joints",
    "sample_window",
    "SynthSpec",
    "synth_generate",
]
