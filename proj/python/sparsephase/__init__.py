"""Phase recognition from sparse frame annotations."""

from ._sparsephase import (
    ConfigError,
    DivergenceError,
    brute_force_path_sum,
    classification_loss,
    collapse,
    ctc_loss,
    detect_transitions,
    evaluate_video,
    evaluate_video_relaxed,
    focal,
    generate_dataset,
    normalize_logits,
    run_experiment,
    scaled_entropy,
    skiptag_sample,
    smoothness_loss,
    star_augment,
    stc_loss,
    timestamp_sample,
)

BLANK = -1
STAR = -2

__all__ = [
    "BLANK",
    "STAR",
    "ConfigError",
    "DivergenceError",
    "brute_force_path_sum",
    "classification_loss",
    "collapse",
    "ctc_loss",
    "detect_transitions",
    "evaluate_video",
    "evaluate_video_relaxed",
    "focal",
    "generate_dataset",
    "normalize_logits",
    "run_experiment",
    "scaled_entropy",
    "skiptag_sample",
    "smoothness_loss",
    "star_augment",
    "stc_loss",
    "timestamp_sample",
]
