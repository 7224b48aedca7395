"""Classifier-ensemble gate: per-MIP classifiers, OR-fusion and segmentation gating.

The ensemble spans three binary dimensions (MIP axis X/Y, brain intact or
de-brained, one of two backbone tags), i.e. 8 members. Real CNN scores plug
in through a score file keyed by (study, classifier id); a trainable
logistic baseline over simple MIP statistics stands in when no external
scores exist.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataFormatError
from .projection import MIP2D
from .volume import ProbabilityVolume

HEALTHY = "healthy"
DISEASED = "diseased"

GATE_AXES = ("X", "Y")
BRAIN_MODES = ("brain", "debrained")  # MIP with the brain intact vs removed
DEFAULT_BACKBONE_TAGS = ("A", "B")
DEFAULT_GAMMA = 0.3
ENSEMBLE_SIZE = 8

# SUV cutoffs for the fraction-above features of the baseline classifier.
FEATURE_THRESHOLDS = (2.5, 5.0, 10.0)
N_FEATURES = 6


@dataclass(frozen=True)
class ClassifierId:
    """One ensemble slot: MIP axis, brain handling and backbone tag."""

    axis: str
    brain: str
    backbone: str

    def __post_init__(self) -> None:
        if self.axis not in GATE_AXES:
            raise ConfigError(f"classifier axis must be one of {GATE_AXES}, got {self.axis!r}")
        if self.brain not in BRAIN_MODES:
            raise ConfigError(f"classifier brain mode must be one of {BRAIN_MODES}, got {self.brain!r}")
        if not self.backbone or "-" in self.backbone:
            raise ConfigError(f"backbone tag must be a non-empty string without '-', got {self.backbone!r}")

    def encode(self) -> str:
        return f"{self.axis}-{self.brain}-{self.backbone}"

    @classmethod
    def parse(cls, encoded: str) -> "ClassifierId":
        parts = encoded.split("-")
        if len(parts) != 3:
            raise ConfigError(f"classifier id must look like 'X-debrained-A', got {encoded!r}")
        return cls(parts[0], parts[1], parts[2])


def default_members(backbone_tags: tuple[str, str] = DEFAULT_BACKBONE_TAGS) -> tuple[ClassifierId, ...]:
    """The canonical 8-member ensemble in a fixed order."""
    return tuple(
        ClassifierId(axis, brain, tag)
        for axis in GATE_AXES
        for brain in BRAIN_MODES
        for tag in backbone_tags
    )


def validate_ensemble(members: Sequence[ClassifierId]) -> None:
    """Reject member sets that do not cover axis x brain x 2 backbones exactly once."""
    if len(members) != ENSEMBLE_SIZE or len(set(members)) != ENSEMBLE_SIZE:
        raise ConfigError(f"ensemble needs exactly {ENSEMBLE_SIZE} distinct members, got {len(members)}")
    tags = sorted({m.backbone for m in members})
    if len(tags) != 2:
        raise ConfigError(f"ensemble needs exactly two backbone tags, got {tags}")
    expected = {(a, b, t) for a in GATE_AXES for b in BRAIN_MODES for t in tags}
    actual = {(m.axis, m.brain, m.backbone) for m in members}
    if actual != expected:
        missing = sorted("-".join(c) for c in expected - actual)
        raise ConfigError(f"ensemble must cover every axis/brain/backbone combination once; missing {missing}")


@dataclass(frozen=True)
class GateConfig:
    """Gate decision threshold and the bound 8-member ensemble."""

    gamma: float = DEFAULT_GAMMA
    members: tuple[ClassifierId, ...] = field(default_factory=default_members)

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma!r}")
        validate_ensemble(self.members)


@dataclass(frozen=True)
class BaselineClassifier:
    """Logistic model over the 6 MIP features (stand-in for the CNN backbones)."""

    weights: tuple[float, ...]
    bias: float

    def __post_init__(self) -> None:
        if len(self.weights) != N_FEATURES:
            raise ConfigError(f"baseline classifier needs {N_FEATURES} weights, got {len(self.weights)}")
        if not all(math.isfinite(w) for w in self.weights) or not math.isfinite(self.bias):
            raise ConfigError("baseline classifier weights must be finite")


def featurize_mip(m: MIP2D) -> np.ndarray:
    """Summarize a MIP as [max, mean, population sigma, frac > 2.5, > 5, > 10]."""
    vals = m.data.astype(np.float64)
    n = vals.size
    fractions = [float((vals > t).sum()) / n for t in FEATURE_THRESHOLDS]
    return np.array([float(vals.max()), float(vals.mean()), float(vals.std()), *fractions])


def _sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def predict_baseline(clf: BaselineClassifier, features: Sequence[float]) -> float:
    """Foreground probability sigmoid(w . f + b) for one feature vector."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape != (N_FEATURES,):
        raise ContractError(f"expected {N_FEATURES} features, got shape {f.shape}")
    if not np.isfinite(f).all():
        raise ContractError("features must be finite")
    z = float(np.dot(np.asarray(clf.weights), f) + clf.bias)
    return _sigmoid(z)


def _as_dataset(features: Iterable[Sequence[float]], labels: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(list(features), dtype=np.float64)
    y = np.asarray(list(labels), dtype=np.float64)
    if x.size == 0:
        x = x.reshape(0, N_FEATURES)
    if x.ndim != 2 or x.shape[1] != N_FEATURES:
        raise ContractError(f"feature matrix must be (N, {N_FEATURES}), got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ContractError("features and labels must have equal length")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ContractError("labels must be 0 or 1")
    return x, y


def log_loss(clf: BaselineClassifier, features: Iterable[Sequence[float]], labels: Iterable[int]) -> float:
    """Mean logistic log-loss of ``clf`` on a dataset."""
    x, y = _as_dataset(features, labels)
    z = x @ np.asarray(clf.weights) + clf.bias
    p = 1.0 / (1.0 + np.exp(-z))
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def log_loss_gradient(
    clf: BaselineClassifier,
    features: Iterable[Sequence[float]],
    labels: Iterable[int],
) -> tuple[np.ndarray, float]:
    """Analytic gradient of :func:`log_loss` w.r.t. (weights, bias)."""
    x, y = _as_dataset(features, labels)
    z = x @ np.asarray(clf.weights) + clf.bias
    p = 1.0 / (1.0 + np.exp(-z))
    residual = p - y
    grad_w = x.T @ residual / len(y)
    grad_b = float(residual.mean())
    return grad_w, grad_b


def fit_baseline(
    features: Iterable[Sequence[float]],
    labels: Iterable[int],
    epochs: int = 500,
    learning_rate: float = 0.05,
    seed: int = 0,
) -> BaselineClassifier:
    """Full-batch gradient-descent fit of the logistic baseline.

    Weights start at zero, so zero epochs returns the all-0.5 predictor.
    ``seed`` is accepted for interface stability; full-batch updates make the
    fit deterministic without it.
    """
    del seed
    x, y = _as_dataset(features, labels)
    if len(y) == 0:
        raise ConfigError("cannot fit a classifier on an empty dataset")
    w = np.zeros(N_FEATURES, dtype=np.float64)
    b = 0.0
    for _ in range(epochs):
        z = x @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        residual = p - y
        w -= learning_rate * (x.T @ residual / len(y))
        b -= learning_rate * float(residual.mean())
    return BaselineClassifier(tuple(float(v) for v in w), float(b))


def or_fuse(probabilities: Sequence[float], gamma: float) -> str:
    """OR-fuse 8 member probabilities: diseased iff any probability >= gamma.

    All members must agree the case is healthy (all below gamma) for a
    healthy verdict; the boundary value counts as positive.
    """
    if len(probabilities) != ENSEMBLE_SIZE:
        raise ContractError(f"or_fuse expects {ENSEMBLE_SIZE} member probabilities, got {len(probabilities)}")
    for p in probabilities:
        if not 0.0 <= float(p) <= 1.0:
            raise ContractError(f"member probability {p!r} outside [0, 1]")
    return DISEASED if any(float(p) >= gamma for p in probabilities) else HEALTHY


def gate(decision: str, prob: ProbabilityVolume) -> ProbabilityVolume:
    """Zero the probability volume for a healthy verdict, pass it through otherwise."""
    if decision not in (HEALTHY, DISEASED):
        raise ConfigError(f"decision must be '{HEALTHY}' or '{DISEASED}', got {decision!r}")
    if decision == DISEASED:
        return prob
    return ProbabilityVolume.zeros(prob.dims, prob.spacing_mm)


SCORE_FILE_HEADER = ("study_id", "classifier_id", "probability")


def load_score_file(path: str | Path) -> dict[tuple[str, str], float]:
    """Read a classifier score CSV into a (study_id, classifier_id) -> probability map."""
    p = Path(path)
    with p.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{p}: empty score file") from None
        if tuple(h.strip() for h in header) != SCORE_FILE_HEADER:
            raise DataFormatError(f"{p}: score file header must be {','.join(SCORE_FILE_HEADER)}")
        scores: dict[tuple[str, str], float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataFormatError(f"{p}:{lineno}: expected 3 columns, got {len(row)}")
            study_id, encoded, prob_text = (cell.strip() for cell in row)
            ClassifierId.parse(encoded)  # validates the encoding
            try:
                prob = float(prob_text)
            except ValueError:
                raise DataFormatError(f"{p}:{lineno}: probability {prob_text!r} is not a number") from None
            if not 0.0 <= prob <= 1.0:
                raise DataFormatError(f"{p}:{lineno}: probability {prob} outside [0, 1]")
            key = (study_id, encoded)
            if key in scores:
                raise DataFormatError(f"{p}:{lineno}: duplicate entry for {key}")
            scores[key] = prob
    return scores


def scores_for_study(
    scores: dict[tuple[str, str], float],
    study_id: str,
    members: Sequence[ClassifierId],
) -> list[float]:
    """Member probabilities for one study; any missing entry is a hard error."""
    missing = [m.encode() for m in members if (study_id, m.encode()) not in scores]
    if missing:
        raise DataFormatError(f"score file has no entry for study {study_id!r}, classifiers {missing}")
    return [scores[(study_id, m.encode())] for m in members]
