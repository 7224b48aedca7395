"""Request/response models for the service; the CLI builds the same models."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

Connectivity = Literal[6, 18, 26]


class ErrorInfo(BaseModel):
    kind: Literal["config", "io", "contract", "internal"]
    detail: str


class ErrorResponse(BaseModel):
    error: ErrorInfo


class HealthResponse(BaseModel):
    status: str
    version: str


class PreprocessRequest(BaseModel):
    pet: str
    ct: str
    label: Optional[str] = None
    output_dir: str
    p_low: float = 0.5
    p_high: float = 99.5
    crop: bool = False
    crop_channel: Literal["pet", "ct"] = "ct"
    crop_threshold: float = 0.05
    sample_patches: int = Field(default=0, ge=0)
    patch_dims: list[int] = Field(default=[96, 96, 96])
    p_lesion: float = Field(default=2.0 / 3.0, ge=0.0, le=1.0)
    seed: int = 0


class PreprocessResponse(BaseModel):
    pet: str
    ct: str
    label: Optional[str] = None
    bbox: Optional[list[list[int]]] = None
    dims: list[int]
    patch_centers: list[list[int]] = Field(default_factory=list)
    patch_dir: Optional[str] = None


class MipRequest(BaseModel):
    volume: str
    axis: Literal["X", "Y", "Z"]
    output: str


class MipResponse(BaseModel):
    output: str
    axis: str
    mip_dims: list[int]
    source_dims: list[int]


class DebrainRequest(BaseModel):
    volume: str
    output: str
    suv_threshold: float = 3.0
    connectivity: Connectivity = 18


class DebrainResponse(BaseModel):
    output: str
    voxels_removed: int


class GateRequest(BaseModel):
    study_id: str
    gamma: float = Field(default=0.3, ge=0.0, le=1.0)
    members: Optional[list[str]] = None
    score_file: Optional[str] = None
    pet: Optional[str] = None
    baseline_weights: Optional[str] = None
    debrain_threshold: float = 3.0
    connectivity: Connectivity = 18


class GateResponse(BaseModel):
    study_id: str
    decision: Literal["healthy", "diseased"]
    gamma: float
    probabilities: dict[str, float]


class FuseRequest(BaseModel):
    inputs: list[str]
    output: str
    weights: Optional[list[float]] = None
    binarize_threshold: Optional[float] = None
    mask_output: Optional[str] = None


class FuseResponse(BaseModel):
    output: str
    n_inputs: int
    mask_output: Optional[str] = None
    mask_foreground: Optional[int] = None


class PostprocessRequest(BaseModel):
    mask: str
    output: str
    boundary_mode: Literal["slices", "percent"] = "slices"
    boundary_lower: float = 0
    boundary_upper: float = 0
    min_voxels: int = 10
    per_component: bool = False
    connectivity: Connectivity = 18


class PostprocessResponse(BaseModel):
    output: str
    foreground_before: int
    foreground_after: int


class EvaluateRequest(BaseModel):
    pred: str
    gt: str
    connectivity: Connectivity = 18
    unit: Literal["ml", "mm3"] = "ml"
    output: Optional[str] = None


class EvaluateResponse(BaseModel):
    dice: Optional[float]
    fpv_ml: float
    fnv_ml: Optional[float]
    healthy_gt: bool
    flags: list[str]
    unit: str
    output: Optional[str] = None


class SplitRequest(BaseModel):
    records: str
    k: int = 5
    seed: int = 0
    output: Optional[str] = None


class SplitResponse(BaseModel):
    k: int
    seed: int
    folds: dict[str, int]
    validation: dict
    output: Optional[str] = None


class RunRequest(BaseModel):
    config: Optional[dict] = None
    config_path: Optional[str] = None


class RunResponse(BaseModel):
    output_dir: str
    n_cases: int
    n_failed: int
    report_path: str
