"""Challenge-style evaluation: foreground Dice, FPV, FNV, CV aggregation and rank scoring.

Per-case policy: all three metrics apply to cases with lesions in the ground
truth; for healthy cases (empty ground truth) only FPV applies and Dice/FNV
are flagged not-applicable and kept out of aggregates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .components import DEFAULT_CONNECTIVITY, label_components
from .errors import ConfigError, ContractError
from .volume import BinaryMask

DISPLAY_DECIMALS = 4

METRIC_KEYS = ("dice", "fpv_ml", "fnv_ml")


@dataclass(frozen=True)
class CaseMetrics:
    """Per-case Dice, FPV and FNV with applicability flags for healthy cases."""

    dice: float | None
    fpv_ml: float
    fnv_ml: float | None
    healthy_gt: bool
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.healthy_gt and (self.dice is not None or self.fnv_ml is not None):
            raise ContractError("healthy cases must flag dice and fnv as not-applicable")
        if self.dice is not None and not 0.0 <= self.dice <= 1.0:
            raise ContractError(f"dice must lie in [0, 1], got {self.dice!r}")
        if self.fpv_ml < 0.0 or (self.fnv_ml is not None and self.fnv_ml < 0.0):
            raise ContractError("volumes must be non-negative")


@dataclass(frozen=True)
class RankWeights:
    """Leaderboard weighting over the (dice, fpv, fnv) ranks."""

    w_dice: float = 0.5
    w_fpv: float = 0.25
    w_fnv: float = 0.25

    def __post_init__(self) -> None:
        weights = (self.w_dice, self.w_fpv, self.w_fnv)
        if any(w < 0.0 for w in weights):
            raise ConfigError(f"rank weights must be non-negative, got {weights}")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError(f"rank weights must sum to 1, got {weights}")


def _check_aligned(pred: BinaryMask, gt: BinaryMask) -> None:
    if pred.dims != gt.dims:
        raise ContractError(f"mask dims differ: pred {pred.dims} vs gt {gt.dims}")
    if pred.spacing_mm != gt.spacing_mm:
        raise ContractError(f"mask spacing differs: pred {pred.spacing_mm} vs gt {gt.spacing_mm}")


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """Foreground Dice 2|P&G| / (|P| + |G|); two empty masks score 1.0 by convention."""
    _check_aligned(pred, gt)
    p = pred.data > 0
    g = gt.data > 0
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    inter = int(np.logical_and(p, g).sum())
    return 2.0 * inter / denom


def _unit_factor(spacing_mm: tuple[float, float, float], unit: str) -> float:
    if unit not in ("ml", "mm3"):
        raise ConfigError(f"unit must be 'ml' or 'mm3', got {unit!r}")
    sx, sy, sz = spacing_mm
    voxel = sx * sy * sz
    return voxel / 1000.0 if unit == "ml" else voxel


def false_positive_volume(
    pred: BinaryMask,
    gt: BinaryMask,
    connectivity: int = DEFAULT_CONNECTIVITY,
    unit: str = "ml",
) -> float:
    """Total volume of predicted components with zero ground-truth overlap.

    A component touching the ground truth by even one voxel contributes
    nothing.
    """
    _check_aligned(pred, gt)
    factor = _unit_factor(pred.spacing_mm, unit)
    cmap = label_components(pred, connectivity)
    if cmap.n_components == 0:
        return 0.0
    overlap = np.bincount(cmap.labels[gt.data > 0], minlength=cmap.n_components + 1)
    voxels = sum(count for k, count in enumerate(cmap.counts, start=1) if overlap[k] == 0)
    return voxels * factor


def false_negative_volume(
    pred: BinaryMask,
    gt: BinaryMask,
    connectivity: int = DEFAULT_CONNECTIVITY,
    unit: str = "ml",
) -> float:
    """Total volume of ground-truth components the prediction misses entirely."""
    _check_aligned(pred, gt)
    factor = _unit_factor(gt.spacing_mm, unit)
    cmap = label_components(gt, connectivity)
    if cmap.n_components == 0:
        return 0.0
    overlap = np.bincount(cmap.labels[pred.data > 0], minlength=cmap.n_components + 1)
    voxels = sum(count for k, count in enumerate(cmap.counts, start=1) if overlap[k] == 0)
    return voxels * factor


def evaluate_case(
    pred: BinaryMask,
    gt: BinaryMask,
    connectivity: int = DEFAULT_CONNECTIVITY,
    unit: str = "ml",
) -> CaseMetrics:
    """All three metrics for one case, honoring the healthy-case policy."""
    _check_aligned(pred, gt)
    fpv = false_positive_volume(pred, gt, connectivity, unit)
    healthy = gt.foreground_count() == 0
    if healthy:
        return CaseMetrics(dice=None, fpv_ml=fpv, fnv_ml=None, healthy_gt=True, flags=("healthy-gt",))
    return CaseMetrics(
        dice=dice(pred, gt),
        fpv_ml=fpv,
        fnv_ml=false_negative_volume(pred, gt, connectivity, unit),
        healthy_gt=False,
    )


def cv_mean(values: Sequence[float]) -> float:
    """Unweighted arithmetic mean across folds."""
    if len(values) == 0:
        raise ConfigError("cannot aggregate an empty fold list")
    return float(sum(float(v) for v in values) / len(values))


def display_round(value: float, decimals: int = DISPLAY_DECIMALS) -> float:
    """Truncate a non-negative metric toward zero at ``decimals`` places.

    Truncation (not half-up rounding) is the display convention for
    aggregate tables here. A guard of 1e-6 scaled units absorbs binary
    float noise just below a grid point (e.g. 5.9366999...99 -> 5.9367).
    """
    if not math.isfinite(value):
        raise ConfigError(f"cannot display-round {value!r}")
    scale = 10**decimals
    return math.floor(value * scale + 1e-6) / scale


def aggregate_cv(per_fold: Sequence[Mapping[str, float]]) -> dict:
    """Average per-fold mean metrics across folds.

    ``per_fold`` maps metric name -> fold mean, one mapping per fold; every
    fold must report the same metric set. Returns full-precision means plus
    the 4-decimal display values.
    """
    if len(per_fold) == 0:
        raise ConfigError("cannot aggregate an empty fold list")
    keys = tuple(per_fold[0].keys())
    for i, fold in enumerate(per_fold[1:], start=1):
        if tuple(fold.keys()) != keys:
            raise ConfigError(f"fold {i} reports metrics {tuple(fold.keys())}, expected {keys}")
    means = {key: cv_mean([fold[key] for fold in per_fold]) for key in keys}
    return {
        "mean": means,
        "display": {key: display_round(value) for key, value in means.items()},
        "n_folds": len(per_fold),
    }


def weighted_rank(
    r_dice: float,
    r_fpv: float,
    r_fnv: float,
    weights: RankWeights = RankWeights(),
) -> float:
    """Weighted leaderboard score over the three metric ranks; lower is better."""
    ranks = (r_dice, r_fpv, r_fnv)
    if any(r < 1 for r in ranks):
        raise ConfigError(f"ranks must be >= 1, got {ranks}")
    return weights.w_dice * r_dice + weights.w_fpv * r_fpv + weights.w_fnv * r_fnv


@dataclass(frozen=True)
class CaseRecord:
    """One evaluated case, optionally tagged with a CV fold."""

    study_id: str
    metrics: CaseMetrics
    fold: int | None = None
    extra: Mapping[str, object] = field(default_factory=dict)


def _mean_block(records: Sequence[CaseRecord]) -> dict:
    dices = [r.metrics.dice for r in records if r.metrics.dice is not None]
    fnvs = [r.metrics.fnv_ml for r in records if r.metrics.fnv_ml is not None]
    fpvs = [r.metrics.fpv_ml for r in records]
    return {
        "dice": cv_mean(dices) if dices else None,
        "fpv_ml": cv_mean(fpvs) if fpvs else None,
        "fnv_ml": cv_mean(fnvs) if fnvs else None,
        "n_cases": len(records),
        "n_with_lesions": len(dices),
    }


def build_report(
    records: Sequence[CaseRecord],
    connectivity: int = DEFAULT_CONNECTIVITY,
    unit: str = "ml",
    rank_block: Mapping[str, float] | None = None,
) -> dict:
    """Assemble the evaluation report with a stable key set.

    Per-case records carry {study_id, dice, fpv_ml, fnv_ml, healthy_gt,
    flags}; fold means and the CV block are filled when folds are assigned
    and null otherwise, so every run emits the same JSON keys.
    """
    cases = []
    for r in sorted(records, key=lambda r: r.study_id):
        entry = {
            "study_id": r.study_id,
            "fold": r.fold,
            "dice": r.metrics.dice,
            "fpv_ml": r.metrics.fpv_ml,
            "fnv_ml": r.metrics.fnv_ml,
            "healthy_gt": r.metrics.healthy_gt,
            "flags": list(r.metrics.flags),
        }
        entry.update(r.extra)
        cases.append(entry)
    report: dict = {
        "volume_unit": unit,
        "connectivity": connectivity,
        "cases": cases,
        "overall": _mean_block(records) if records else None,
        "fold_means": {},
        "cv": None,
        "weighted_rank": dict(rank_block) if rank_block else None,
    }
    folds = sorted({r.fold for r in records if r.fold is not None})
    if folds:
        fold_means = {str(f): _mean_block([r for r in records if r.fold == f]) for f in folds}
        report["fold_means"] = fold_means
        complete = [
            {k: block[k] for k in METRIC_KEYS}
            for block in fold_means.values()
            if all(block[k] is not None for k in METRIC_KEYS)
        ]
        if complete:
            report["cv"] = aggregate_cv(complete)
    return report
