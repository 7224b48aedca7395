"""Batch pipeline runner: MIP gating, late fusion, post-processing and reporting.

Per case: evaluate the 8-member classifier gate (from an external score file
or trained baseline weights); a healthy verdict short-circuits segmentation
and writes an empty mask without ever opening the probability inputs, while
a diseased verdict late-fuses the per-model probability volumes, binarizes
and post-processes. Cases are isolated: one failure is recorded and the run
continues.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ContractError, DataFormatError
from .fusion import DEFAULT_BINARIZE_THRESHOLD, binarize, late_fuse
from .gating import (
    DEFAULT_GAMMA,
    HEALTHY,
    BaselineClassifier,
    ClassifierId,
    GateConfig,
    default_members,
    featurize_mip,
    load_score_file,
    or_fuse,
    predict_baseline,
    scores_for_study,
)
from .metrics import CaseMetrics, CaseRecord, build_report, evaluate_case
from .postprocess import DEFAULT_MIN_VOXELS, BoundarySpec, suppress_tiny_prediction, zero_z_boundaries
from .projection import DEFAULT_SUV_THRESHOLD, debrain, mip
from .components import DEFAULT_CONNECTIVITY
from .volume import BinaryMask, ProbabilityVolume, Volume3D, load_nifti, load_volume, mvol_paths, save_volume

logger = logging.getLogger("petfuse.pipeline")

_STUDY_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


@dataclass(frozen=True)
class CaseSpec:
    """Input paths for one study."""

    study_id: str
    pet: str
    ct: str
    gt: str | None = None
    prob_volumes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not _STUDY_ID_RE.match(self.study_id):
            raise ConfigError(f"study_id {self.study_id!r} must match {_STUDY_ID_RE.pattern}")
        object.__setattr__(self, "prob_volumes", tuple(self.prob_volumes))


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one batch run needs; validated before any compute."""

    cases: tuple[CaseSpec, ...]
    output_dir: str
    gamma: float = DEFAULT_GAMMA
    members: tuple[str, ...] = field(default_factory=lambda: tuple(m.encode() for m in default_members()))
    score_file: str | None = None
    baseline_weights: str | None = None
    debrain_threshold: float = DEFAULT_SUV_THRESHOLD
    fusion_weights: tuple[float, ...] | None = None
    binarize_threshold: float = DEFAULT_BINARIZE_THRESHOLD
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    min_voxels: int = DEFAULT_MIN_VOXELS
    suppress_per_component: bool = False
    connectivity: int = DEFAULT_CONNECTIVITY
    volume_unit: str = "ml"
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.cases:
            raise ConfigError("pipeline config lists no cases")
        ids = [c.study_id for c in self.cases]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate study_id in case list")
        object.__setattr__(self, "cases", tuple(self.cases))
        object.__setattr__(self, "members", tuple(self.members))
        if self.fusion_weights is not None:
            object.__setattr__(self, "fusion_weights", tuple(float(w) for w in self.fusion_weights))
        GateConfig(self.gamma, tuple(ClassifierId.parse(m) for m in self.members))
        if not 0.0 <= self.binarize_threshold <= 1.0:
            raise ConfigError(f"binarize_threshold must lie in [0, 1], got {self.binarize_threshold!r}")
        if self.min_voxels < 0:
            raise ConfigError(f"min_voxels must be >= 0, got {self.min_voxels!r}")
        if self.debrain_threshold <= 0.0:
            raise ConfigError(f"debrain_threshold must be > 0, got {self.debrain_threshold!r}")
        if self.connectivity not in (6, 18, 26):
            raise ConfigError(f"connectivity must be 6, 18 or 26, got {self.connectivity!r}")
        if self.volume_unit not in ("ml", "mm3"):
            raise ConfigError(f"volume_unit must be 'ml' or 'mm3', got {self.volume_unit!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers!r}")
        if (self.score_file is None) == (self.baseline_weights is None):
            raise ConfigError("exactly one of score_file and baseline_weights must be set")

    @property
    def member_ids(self) -> tuple[ClassifierId, ...]:
        return tuple(ClassifierId.parse(m) for m in self.members)


def config_from_dict(doc: dict) -> PipelineConfig:
    """Build a PipelineConfig from the run-config JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("pipeline config must be a JSON object")
    try:
        cases = tuple(
            CaseSpec(
                study_id=str(c["study_id"]),
                pet=str(c["pet"]),
                ct=str(c["ct"]),
                gt=str(c["gt"]) if c.get("gt") else None,
                prob_volumes=tuple(str(p) for p in c.get("prob_volumes", ())),
            )
            for c in doc.get("cases", ())
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed case entry: {exc!r}") from exc
    gate_doc = doc.get("gate", {})
    fusion_doc = doc.get("fusion", {})
    post_doc = doc.get("postprocess", {})
    metrics_doc = doc.get("metrics", {})
    boundary_doc = post_doc.get("boundary", {})
    try:
        boundary = BoundarySpec(
            mode=boundary_doc.get("mode", "slices"),
            lower=boundary_doc.get("lower", 0),
            upper=boundary_doc.get("upper", 0),
        )
        output_dir = doc.get("output_dir")
        if not output_dir:
            raise ConfigError("pipeline config needs an output_dir")
        weights = fusion_doc.get("weights")
        return PipelineConfig(
            cases=cases,
            output_dir=str(output_dir),
            gamma=float(gate_doc.get("gamma", DEFAULT_GAMMA)),
            members=tuple(gate_doc.get("members") or (m.encode() for m in default_members())),
            score_file=gate_doc.get("score_file"),
            baseline_weights=gate_doc.get("baseline_weights"),
            debrain_threshold=float(gate_doc.get("debrain_threshold", DEFAULT_SUV_THRESHOLD)),
            fusion_weights=tuple(weights) if weights else None,
            binarize_threshold=float(fusion_doc.get("binarize_threshold", DEFAULT_BINARIZE_THRESHOLD)),
            boundary=boundary,
            min_voxels=int(post_doc.get("min_voxels", DEFAULT_MIN_VOXELS)),
            suppress_per_component=bool(post_doc.get("per_component", False)),
            connectivity=int(metrics_doc.get("connectivity", DEFAULT_CONNECTIVITY)),
            volume_unit=str(metrics_doc.get("unit", "ml")),
            seed=int(doc.get("seed", 0)),
            workers=int(doc.get("workers", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed pipeline config: {exc}") from exc


def load_config(path: str | Path) -> PipelineConfig:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{p}: invalid config JSON: {exc}") from exc
    return config_from_dict(doc)


def discover_cases(input_dir: str | Path) -> tuple[CaseSpec, ...]:
    """One case per subdirectory of ``input_dir``.

    Expected files per case directory: ``pet`` and ``ct`` volumes (MVOL pair
    or ``.nii``), an optional ``gt``, and probability volumes matching
    ``prob*`` in sorted name order.
    """
    root = Path(input_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"input directory {root} does not exist")

    def find(case_dir: Path, stem: str) -> str | None:
        for suffix in (".mvol.json", ".nii"):
            candidate = case_dir / f"{stem}{suffix}"
            if candidate.exists():
                return str(candidate)
        return None

    cases = []
    for case_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        pet = find(case_dir, "pet")
        ct = find(case_dir, "ct")
        if pet is None or ct is None:
            raise ConfigError(f"case directory {case_dir} must contain pet and ct volumes")
        probs = tuple(
            str(p) for p in sorted(case_dir.glob("prob*.mvol.json")) + sorted(case_dir.glob("prob*.nii"))
        )
        cases.append(CaseSpec(case_dir.name, pet, ct, find(case_dir, "gt"), probs))
    if not cases:
        raise ConfigError(f"no case directories found under {root}")
    return tuple(cases)


def load_any_volume(path: str | Path) -> Volume3D:
    """Dispatch on extension: .nii via the NIfTI reader, everything else as MVOL."""
    if str(path).endswith(".nii"):
        return load_nifti(path)
    return load_volume(path)


def load_baseline_weights(path: str | Path, members: tuple[ClassifierId, ...]) -> dict[str, BaselineClassifier]:
    """Read per-member logistic weights: {"members": {id: {"weights": [...], "bias": b}}}."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{p}: invalid weights JSON: {exc}") from exc
    table = doc.get("members") if isinstance(doc, dict) else None
    if not isinstance(table, dict):
        raise DataFormatError(f"{p}: weights file must contain a 'members' object")
    classifiers: dict[str, BaselineClassifier] = {}
    for member in members:
        key = member.encode()
        entry = table.get(key)
        if entry is None:
            raise DataFormatError(f"{p}: no weights for ensemble member {key}")
        try:
            classifiers[key] = BaselineClassifier(tuple(float(w) for w in entry["weights"]), float(entry["bias"]))
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise DataFormatError(f"{p}: malformed weights for {key}: {exc}") from exc
    return classifiers


def validate_inputs(cfg: PipelineConfig) -> None:
    """Check the inputs the run will definitely touch.

    Probability volumes are deliberately not checked here: a healthy-gated
    case must succeed even if they are absent, since the gate skips reading
    them entirely.
    """
    for case in cfg.cases:
        for label, path in (("pet", case.pet), ("ct", case.ct), ("gt", case.gt)):
            if path is None:
                continue
            probe = Path(path) if str(path).endswith(".nii") else mvol_paths(path)[0]
            if not probe.exists():
                raise FileNotFoundError(f"case {case.study_id}: {label} volume {path} does not exist")
    if cfg.score_file is not None and not Path(cfg.score_file).exists():
        raise FileNotFoundError(f"score file {cfg.score_file} does not exist")
    if cfg.baseline_weights is not None and not Path(cfg.baseline_weights).exists():
        raise FileNotFoundError(f"baseline weights {cfg.baseline_weights} do not exist")


def _classify_error(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, (FileNotFoundError, DataFormatError, OSError)):
        return "io"
    if isinstance(exc, ContractError):
        return "contract"
    return "internal"


def _gate_probabilities(
    cfg: PipelineConfig,
    case: CaseSpec,
    pet: Volume3D,
    scores: dict[tuple[str, str], float] | None,
    classifiers: dict[str, BaselineClassifier] | None,
) -> dict[str, float]:
    members = cfg.member_ids
    if scores is not None:
        values = scores_for_study(scores, case.study_id, members)
        return {m.encode(): v for m, v in zip(members, values)}
    assert classifiers is not None
    mips = {
        ("X", "brain"): mip(pet, "X"),
        ("Y", "brain"): mip(pet, "Y"),
    }
    debrained = debrain(pet, cfg.debrain_threshold, cfg.connectivity)
    mips[("X", "debrained")] = mip(debrained, "X")
    mips[("Y", "debrained")] = mip(debrained, "Y")
    features = {key: featurize_mip(m) for key, m in mips.items()}
    return {
        m.encode(): predict_baseline(classifiers[m.encode()], features[(m.axis, m.brain)])
        for m in members
    }


def run_case(
    cfg: PipelineConfig,
    case: CaseSpec,
    scores: dict[tuple[str, str], float] | None,
    classifiers: dict[str, BaselineClassifier] | None,
) -> dict:
    """Process one study and write its mask + result marker; returns the case record."""
    out_dir = Path(cfg.output_dir)
    pet = load_any_volume(case.pet)
    ct = load_any_volume(case.ct)
    if ct.dims != pet.dims or ct.spacing_mm != pet.spacing_mm:
        raise ContractError(f"case {case.study_id}: pet/ct grids differ: {pet.dims} vs {ct.dims}")

    probabilities = _gate_probabilities(cfg, case, pet, scores, classifiers)
    decision = or_fuse(list(probabilities.values()), cfg.gamma)

    if decision == HEALTHY:
        mask = BinaryMask.zeros(pet.dims, pet.spacing_mm)
    else:
        if not case.prob_volumes:
            raise ConfigError(f"case {case.study_id}: diseased verdict but no probability volumes configured")
        probs = []
        for path in case.prob_volumes:
            vol = load_any_volume(path)
            prob = ProbabilityVolume.from_volume(vol)
            if prob.dims != pet.dims:
                raise ContractError(
                    f"case {case.study_id}: probability volume {path} has dims {prob.dims}, expected {pet.dims}"
                )
            probs.append(ProbabilityVolume(prob.data, pet.spacing_mm))
        fused = late_fuse(probs, cfg.fusion_weights)
        mask = binarize(fused, cfg.binarize_threshold)
        mask = zero_z_boundaries(mask, cfg.boundary)
        mask = suppress_tiny_prediction(mask, cfg.min_voxels, cfg.suppress_per_component, cfg.connectivity)

    mask_header, _ = save_volume(mask, out_dir / f"{case.study_id}_mask")
    record: dict = {
        "study_id": case.study_id,
        "status": "ok",
        "gated": decision == HEALTHY,
        "decision": decision,
        "probabilities": probabilities,
        "mask": str(mask_header),
        "error": None,
    }
    if case.gt is not None:
        gt_vol = load_any_volume(case.gt)
        gt = gt_vol if isinstance(gt_vol, BinaryMask) else BinaryMask.from_volume(gt_vol)
        cm = evaluate_case(mask, gt, cfg.connectivity, cfg.volume_unit)
        record["metrics"] = {
            "dice": cm.dice,
            "fpv_ml": cm.fpv_ml,
            "fnv_ml": cm.fnv_ml,
            "healthy_gt": cm.healthy_gt,
            "flags": list(cm.flags),
        }
    else:
        record["metrics"] = None
    (out_dir / f"{case.study_id}_result.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every case, write the aggregate report, and return it.

    Any case failure is recorded in that case's slot and the run continues;
    the report's ``n_failed`` drives the caller's exit status.
    """
    validate_inputs(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores = load_score_file(cfg.score_file) if cfg.score_file is not None else None
    classifiers = (
        load_baseline_weights(cfg.baseline_weights, cfg.member_ids) if cfg.baseline_weights is not None else None
    )

    def safe_run(case: CaseSpec) -> dict:
        try:
            return run_case(cfg, case, scores, classifiers)
        except Exception as exc:  # per-case isolation: record and continue
            logger.exception("case %s failed", case.study_id)
            return {
                "study_id": case.study_id,
                "status": "error",
                "gated": None,
                "decision": None,
                "probabilities": None,
                "mask": None,
                "metrics": None,
                "error": {"kind": _classify_error(exc), "detail": str(exc)},
            }

    if cfg.workers == 1:
        records = [safe_run(case) for case in cfg.cases]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(safe_run, cfg.cases))

    evaluated = [
        CaseRecord(r["study_id"], _metrics_from_record(r))
        for r in records
        if r["status"] == "ok" and r["metrics"] is not None
    ]
    report = {
        "settings": {
            "gamma": cfg.gamma,
            "members": list(cfg.members),
            "gate_mode": "scores" if cfg.score_file else "baseline",
            "debrain_threshold": cfg.debrain_threshold,
            "fusion_weights": list(cfg.fusion_weights) if cfg.fusion_weights else None,
            "binarize_threshold": cfg.binarize_threshold,
            "boundary": {"mode": cfg.boundary.mode, "lower": cfg.boundary.lower, "upper": cfg.boundary.upper},
            "min_voxels": cfg.min_voxels,
            "connectivity": cfg.connectivity,
            "volume_unit": cfg.volume_unit,
            "seed": cfg.seed,
        },
        "n_cases": len(records),
        "n_failed": sum(1 for r in records if r["status"] == "error"),
        "cases": records,
        "metrics_report": build_report(evaluated, cfg.connectivity, cfg.volume_unit) if evaluated else None,
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _metrics_from_record(record: dict) -> CaseMetrics:
    m = record["metrics"]
    return CaseMetrics(
        dice=m["dice"],
        fpv_ml=m["fpv_ml"],
        fnv_ml=m["fnv_ml"],
        healthy_gt=m["healthy_gt"],
        flags=tuple(m["flags"]),
    )
