"""Evaluation of registration results against synthetic ground truth."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from .core import RegistrationResult
from .synthdata import SyntheticInstance

SUBSETS = ("all", "missing", "non_missing")


def mean_sq_distance(
    result: RegistrationResult, instance: SyntheticInstance, subset: str = "all"
) -> Optional[float]:
    """Mean squared point-to-point error over the chosen reference subset.

    Returns None when the subset is empty (absent, never zero).  Failed
    results carry no geometry worth scoring and are rejected.
    """
    if result.failed:
        raise ValueError("failed registrations are excluded from distance metrics")
    if subset not in SUBSETS:
        raise ValueError(f"subset must be one of {SUBSETS}")
    gt = instance.ground_truth.points
    fitted = result.deformed_reference.points
    if gt.shape != fitted.shape:
        raise ValueError("result and ground truth are not index-aligned")
    if subset == "all":
        mask = np.ones(gt.shape[0], dtype=bool)
    elif subset == "missing":
        mask = instance.missing_mask
    else:
        mask = ~instance.missing_mask
    if not np.any(mask):
        return None
    return float(np.mean(np.sum((gt[mask] - fitted[mask]) ** 2, axis=1)))


def success_ratio(results: Sequence[RegistrationResult]) -> float:
    if len(results) == 0:
        raise ValueError("need at least one result")
    return sum(1 for r in results if not r.failed) / len(results)


def missing_detection(
    result: RegistrationResult, instance: SyntheticInstance
) -> Tuple[Optional[float], Optional[float]]:
    """(recall, precision) of the detected missing set against the true one.

    Recall is None when nothing is truly missing; precision is None when
    nothing was flagged.
    """
    flagged = set(int(i) for i in result.state.missing) if result.state is not None else set()
    true_missing = set(np.flatnonzero(instance.missing_mask).tolist())
    hit = len(flagged & true_missing)
    recall = hit / len(true_missing) if true_missing else None
    precision = hit / len(flagged) if flagged else None
    return recall, precision


__all__ = ["mean_sq_distance", "success_ratio", "missing_detection", "SUBSETS"]
