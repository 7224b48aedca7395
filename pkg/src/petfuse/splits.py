"""Deterministic grouped, stratified k-fold assignment.

All studies of a patient share one fold; folds balance study counts within
each (sex, diagnosis) stratum via a greedy largest-first heuristic. The
assignment is a pure function of (records, k, seed), independent of record
order.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, DataFormatError

DIAGNOSES = ("negative", "melanoma", "lung_cancer", "lymphoma")

RECORDS_CSV_HEADER = ("study_id", "patient_id", "sex", "diagnosis")


@dataclass(frozen=True)
class StudyRecord:
    study_id: str
    patient_id: str
    sex: str
    diagnosis: str

    def __post_init__(self) -> None:
        if not self.study_id or not self.patient_id:
            raise ConfigError("study_id and patient_id must be non-empty")
        if not self.sex:
            raise ConfigError(f"study {self.study_id}: sex must be non-empty")
        if self.diagnosis not in DIAGNOSES:
            raise ConfigError(f"study {self.study_id}: diagnosis must be one of {DIAGNOSES}, got {self.diagnosis!r}")


@dataclass(frozen=True)
class SplitAssignment:
    """patient_id -> fold index in [0, k)."""

    fold_of: Mapping[str, int]
    k: int


def _group_patients(records: Sequence[StudyRecord]) -> dict[str, dict]:
    patients: dict[str, dict] = {}
    seen_studies: set[str] = set()
    for rec in records:
        if rec.study_id in seen_studies:
            raise ConfigError(f"duplicate study_id {rec.study_id!r}")
        seen_studies.add(rec.study_id)
        entry = patients.setdefault(
            rec.patient_id,
            {"sex": rec.sex, "diagnosis": rec.diagnosis, "n_studies": 0},
        )
        if entry["sex"] != rec.sex or entry["diagnosis"] != rec.diagnosis:
            raise ConfigError(
                f"patient {rec.patient_id!r} has inconsistent metadata: "
                f"({entry['sex']}, {entry['diagnosis']}) vs ({rec.sex}, {rec.diagnosis})"
            )
        entry["n_studies"] += 1
    return patients


def make_folds(records: Sequence[StudyRecord], k: int = 5, seed: int = 0) -> SplitAssignment:
    """Assign every patient to a fold, grouped and stratified.

    Within each (sex, diagnosis) stratum, patients are shuffled by the
    seeded RNG, stably sorted by descending study count, and each is placed
    on the fold with the fewest studies in that stratum (ties: fewest total
    studies, then lowest fold index).
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if not records:
        raise ConfigError("no study records given")
    patients = _group_patients(records)
    if k > len(patients):
        raise ConfigError(f"k={k} exceeds the number of patients ({len(patients)})")

    strata: dict[tuple[str, str], list[str]] = {}
    for pid, entry in patients.items():
        strata.setdefault((entry["sex"], entry["diagnosis"]), []).append(pid)

    rng = random.Random(seed)
    fold_of: dict[str, int] = {}
    total_counts = [0] * k
    for key in sorted(strata):
        pids = sorted(strata[key])
        rng.shuffle(pids)
        pids.sort(key=lambda p: -patients[p]["n_studies"])  # stable: shuffle breaks ties
        stratum_counts = [0] * k
        for pid in pids:
            fold = min(range(k), key=lambda f: (stratum_counts[f], total_counts[f], f))
            fold_of[pid] = fold
            stratum_counts[fold] += patients[pid]["n_studies"]
            total_counts[fold] += patients[pid]["n_studies"]
    return SplitAssignment(fold_of, k)


def _resolve_fold(assignment: SplitAssignment, rec: StudyRecord) -> int | None:
    # study-level keys take precedence so hand-built study assignments are auditable
    if rec.study_id in assignment.fold_of:
        return assignment.fold_of[rec.study_id]
    return assignment.fold_of.get(rec.patient_id)


def validate_folds(assignment: SplitAssignment, records: Sequence[StudyRecord]) -> dict:
    """Report per-fold stratum counts, maximum imbalance and grouping violations."""
    k = assignment.k
    stratum_counts: dict[str, list[int]] = {}
    patient_folds: dict[str, set[int]] = {}
    violations: list[dict] = []
    for rec in records:
        fold = _resolve_fold(assignment, rec)
        if fold is None:
            violations.append({"kind": "unassigned", "study_id": rec.study_id, "patient_id": rec.patient_id})
            continue
        if not 0 <= fold < k:
            violations.append({"kind": "fold-out-of-range", "study_id": rec.study_id, "fold": fold})
            continue
        key = f"{rec.sex}|{rec.diagnosis}"
        stratum_counts.setdefault(key, [0] * k)[fold] += 1
        patient_folds.setdefault(rec.patient_id, set()).add(fold)
    for pid, folds in sorted(patient_folds.items()):
        if len(folds) > 1:
            violations.append({"kind": "patient-split", "patient_id": pid, "folds": sorted(folds)})
    max_imbalance = 0
    for counts in stratum_counts.values():
        max_imbalance = max(max_imbalance, max(counts) - min(counts))
    return {
        "k": k,
        "n_patients": len(patient_folds),
        "n_studies": len(records),
        "stratum_counts": {key: stratum_counts[key] for key in sorted(stratum_counts)},
        "max_imbalance": max_imbalance,
        "grouping_violations": violations,
    }


def read_records_csv(path: str | Path) -> list[StudyRecord]:
    """Read study records from a CSV with header study_id,patient_id,sex,diagnosis."""
    p = Path(path)
    with p.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [col for col in RECORDS_CSV_HEADER if reader.fieldnames is None or col not in reader.fieldnames]
        if missing:
            raise DataFormatError(f"{p}: records CSV is missing columns {missing}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(
                    StudyRecord(
                        study_id=(row["study_id"] or "").strip(),
                        patient_id=(row["patient_id"] or "").strip(),
                        sex=(row["sex"] or "").strip(),
                        diagnosis=(row["diagnosis"] or "").strip(),
                    )
                )
            except ConfigError as exc:
                raise DataFormatError(f"{p}:{lineno}: {exc}") from exc
    if not records:
        raise DataFormatError(f"{p}: no study records found")
    return records


def split_to_json(assignment: SplitAssignment, records: Sequence[StudyRecord], seed: int) -> dict:
    """The split output document: fold mapping plus its validation report."""
    return {
        "k": assignment.k,
        "seed": seed,
        "folds": {pid: assignment.fold_of[pid] for pid in sorted(assignment.fold_of)},
        "validation": validate_folds(assignment, records),
    }
