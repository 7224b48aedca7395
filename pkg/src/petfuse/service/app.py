"""Service endpoints: thin wrappers that load volumes, call the core package and save results.

Every handler is a plain function over the pydantic models in
:mod:`petfuse.service.schemas`, so the CLI can invoke the same code
in-process while HTTP clients go through FastAPI.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, ContractError, DataFormatError, PetfuseError
from ..fusion import binarize, late_fuse
from ..gating import (
    ClassifierId,
    GateConfig,
    default_members,
    featurize_mip,
    load_score_file,
    or_fuse,
    predict_baseline,
    scores_for_study,
)
from ..metrics import CaseMetrics, CaseRecord, build_report, evaluate_case
from ..pipeline import config_from_dict, load_any_volume, load_baseline_weights, load_config, run_pipeline
from ..postprocess import BoundarySpec, suppress_tiny_prediction, zero_z_boundaries
from ..preprocess import CaseBundle, SamplerConfig, ct_clip_scale, foreground_crop, sample_patch, suv_z_transform
from ..projection import debrain, mip, mip_as_volume
from ..splits import make_folds, read_records_csv, split_to_json
from ..volume import BinaryMask, ProbabilityVolume, save_volume
from . import schemas


def _as_mask(path: str) -> BinaryMask:
    vol = load_any_volume(path)
    return vol if isinstance(vol, BinaryMask) else BinaryMask.from_volume(vol)


def op_preprocess(req: schemas.PreprocessRequest) -> schemas.PreprocessResponse:
    pet = load_any_volume(req.pet)
    ct = load_any_volume(req.ct)
    label = _as_mask(req.label) if req.label else None
    bundle = CaseBundle(suv_z_transform(pet), ct_clip_scale(ct, req.p_low, req.p_high), label)
    bbox = None
    if req.crop:
        bundle, box = foreground_crop(bundle, req.crop_channel, req.crop_threshold)
        bbox = [list(b) for b in box]
    out_dir = Path(req.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pet_path, _ = save_volume(bundle.pet, out_dir / "pet_preprocessed")
    ct_path, _ = save_volume(bundle.ct, out_dir / "ct_preprocessed")
    label_path = None
    if bundle.label is not None:
        label_path = str(save_volume(bundle.label, out_dir / "label_preprocessed")[0])
    centers: list[list[int]] = []
    patch_dir = None
    if req.sample_patches > 0:
        cfg = SamplerConfig(tuple(req.patch_dims), req.p_lesion, req.seed)
        stream = np.random.default_rng(req.seed)
        patches = out_dir / "patches"
        patches.mkdir(exist_ok=True)
        for k in range(req.sample_patches):
            patch, center = sample_patch(bundle, cfg, rng=stream)
            centers.append(list(center))
            save_volume(patch.pet, patches / f"patch_{k:03d}_pet")
            save_volume(patch.ct, patches / f"patch_{k:03d}_ct")
            if patch.label is not None:
                save_volume(patch.label, patches / f"patch_{k:03d}_label")
        patch_dir = str(patches)
    return schemas.PreprocessResponse(
        pet=str(pet_path),
        ct=str(ct_path),
        label=label_path,
        bbox=bbox,
        dims=list(bundle.dims),
        patch_centers=centers,
        patch_dir=patch_dir,
    )


def op_mip(req: schemas.MipRequest) -> schemas.MipResponse:
    vol = load_any_volume(req.volume)
    projected = mip(vol, req.axis)
    out, _ = save_volume(mip_as_volume(projected, vol.spacing_mm), req.output)
    return schemas.MipResponse(
        output=str(out),
        axis=req.axis,
        mip_dims=list(projected.dims),
        source_dims=list(projected.source_dims),
    )


def op_debrain(req: schemas.DebrainRequest) -> schemas.DebrainResponse:
    vol = load_any_volume(req.volume)
    cleaned = debrain(vol, req.suv_threshold, req.connectivity)
    removed = int(np.count_nonzero(vol.data != cleaned.data))
    out, _ = save_volume(cleaned, req.output)
    return schemas.DebrainResponse(output=str(out), voxels_removed=removed)


def op_gate(req: schemas.GateRequest) -> schemas.GateResponse:
    members = tuple(ClassifierId.parse(m) for m in req.members) if req.members else default_members()
    gate_cfg = GateConfig(req.gamma, members)
    if (req.score_file is None) == (req.baseline_weights is None):
        raise ConfigError("gate needs exactly one of score_file and baseline_weights")
    if req.score_file is not None:
        scores = load_score_file(req.score_file)
        values = scores_for_study(scores, req.study_id, members)
        probabilities = {m.encode(): v for m, v in zip(members, values)}
    else:
        if req.pet is None:
            raise ConfigError("baseline gating needs a pet volume to project")
        classifiers = load_baseline_weights(req.baseline_weights, members)
        pet = load_any_volume(req.pet)
        mips = {("X", "brain"): mip(pet, "X"), ("Y", "brain"): mip(pet, "Y")}
        cleaned = debrain(pet, req.debrain_threshold, req.connectivity)
        mips[("X", "debrained")] = mip(cleaned, "X")
        mips[("Y", "debrained")] = mip(cleaned, "Y")
        features = {key: featurize_mip(m) for key, m in mips.items()}
        probabilities = {
            m.encode(): predict_baseline(classifiers[m.encode()], features[(m.axis, m.brain)]) for m in members
        }
    decision = or_fuse(list(probabilities.values()), gate_cfg.gamma)
    return schemas.GateResponse(
        study_id=req.study_id, decision=decision, gamma=gate_cfg.gamma, probabilities=probabilities
    )


def op_fuse(req: schemas.FuseRequest) -> schemas.FuseResponse:
    volumes = [ProbabilityVolume.from_volume(load_any_volume(p)) for p in req.inputs]
    fused = late_fuse(volumes, req.weights)
    out, _ = save_volume(fused, req.output, dtype="f32")
    mask_output = None
    mask_foreground = None
    if req.binarize_threshold is not None:
        if req.mask_output is None:
            raise ConfigError("binarize_threshold needs a mask_output path")
        mask = binarize(fused, req.binarize_threshold)
        mask_output = str(save_volume(mask, req.mask_output)[0])
        mask_foreground = mask.foreground_count()
    return schemas.FuseResponse(
        output=str(out), n_inputs=len(volumes), mask_output=mask_output, mask_foreground=mask_foreground
    )


def op_postprocess(req: schemas.PostprocessRequest) -> schemas.PostprocessResponse:
    mask = _as_mask(req.mask)
    before = mask.foreground_count()
    spec = BoundarySpec(req.boundary_mode, req.boundary_lower, req.boundary_upper)
    cleaned = zero_z_boundaries(mask, spec)
    cleaned = suppress_tiny_prediction(cleaned, req.min_voxels, req.per_component, req.connectivity)
    out, _ = save_volume(cleaned, req.output)
    return schemas.PostprocessResponse(
        output=str(out), foreground_before=before, foreground_after=cleaned.foreground_count()
    )


def op_evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    pred = _as_mask(req.pred)
    gt = _as_mask(req.gt)
    cm: CaseMetrics = evaluate_case(pred, gt, req.connectivity, req.unit)
    output = None
    if req.output:
        report = build_report([CaseRecord("case", cm)], req.connectivity, req.unit)
        Path(req.output).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        output = req.output
    return schemas.EvaluateResponse(
        dice=cm.dice,
        fpv_ml=cm.fpv_ml,
        fnv_ml=cm.fnv_ml,
        healthy_gt=cm.healthy_gt,
        flags=list(cm.flags),
        unit=req.unit,
        output=output,
    )


def op_split(req: schemas.SplitRequest) -> schemas.SplitResponse:
    records = read_records_csv(req.records)
    assignment = make_folds(records, req.k, req.seed)
    doc = split_to_json(assignment, records, req.seed)
    output = None
    if req.output:
        Path(req.output).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        output = req.output
    return schemas.SplitResponse(
        k=doc["k"], seed=doc["seed"], folds=doc["folds"], validation=doc["validation"], output=output
    )


def op_run(req: schemas.RunRequest) -> schemas.RunResponse:
    if (req.config is None) == (req.config_path is None):
        raise ConfigError("run needs exactly one of config and config_path")
    cfg = config_from_dict(req.config) if req.config is not None else load_config(req.config_path)
    report = run_pipeline(cfg)
    return schemas.RunResponse(
        output_dir=cfg.output_dir,
        n_cases=report["n_cases"],
        n_failed=report["n_failed"],
        report_path=str(Path(cfg.output_dir) / "report.json"),
    )


_ERROR_STATUS = {
    "config": 400,
    "io": 404,
    "contract": 422,
    "internal": 500,
}


def _error_kind(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, (DataFormatError, FileNotFoundError, OSError)):
        return "io"
    if isinstance(exc, ContractError):
        return "contract"
    return "internal"


def create_app() -> FastAPI:
    application = FastAPI(title="petfuse", version=__version__)

    @application.exception_handler(PetfuseError)
    @application.exception_handler(FileNotFoundError)
    @application.exception_handler(OSError)
    async def handle_errors(_: Request, exc: Exception) -> JSONResponse:
        kind = _error_kind(exc)
        return JSONResponse(
            status_code=_ERROR_STATUS[kind],
            content={"error": {"kind": kind, "detail": str(exc)}},
        )

    @application.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    application.post("/preprocess", response_model=schemas.PreprocessResponse)(op_preprocess)
    application.post("/mip", response_model=schemas.MipResponse)(op_mip)
    application.post("/debrain", response_model=schemas.DebrainResponse)(op_debrain)
    application.post("/gate", response_model=schemas.GateResponse)(op_gate)
    application.post("/fuse", response_model=schemas.FuseResponse)(op_fuse)
    application.post("/postprocess", response_model=schemas.PostprocessResponse)(op_postprocess)
    application.post("/evaluate", response_model=schemas.EvaluateResponse)(op_evaluate)
    application.post("/split", response_model=schemas.SplitResponse)(op_split)
    application.post("/run", response_model=schemas.RunResponse)(op_run)
    return application


app = create_app()
