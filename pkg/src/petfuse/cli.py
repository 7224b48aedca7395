"""Command-line client for the pipeline service.

Each subcommand builds the same request model the HTTP endpoint accepts and
either calls the handler in-process (default) or posts it to a running
service given ``--server``. The client is thin by design: all pipeline logic
lives in the core package behind the service layer.

Exit codes: 0 success, 1 case failures in a run, 2 config errors, 3 I/O
errors, 4 contract errors. ``PETFUSE_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable

import httpx
from pydantic import BaseModel, ValidationError

from . import __version__
from .errors import ConfigError, ContractError, DataFormatError, PetfuseError
from .pipeline import discover_cases
from .service import schemas
from .service.app import (
    op_debrain,
    op_evaluate,
    op_fuse,
    op_gate,
    op_mip,
    op_postprocess,
    op_preprocess,
    op_run,
    op_split,
)

logger = logging.getLogger("petfuse.cli")

EXIT_OK = 0
EXIT_CASE_FAILURES = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CONTRACT = 4

_REMOTE_ERRORS = {
    "config": ConfigError,
    "io": DataFormatError,
    "contract": ContractError,
}

# subcommand -> (handler, request model, response model, route)
_OPERATIONS: dict[str, tuple[Callable, type[BaseModel], type[BaseModel], str]] = {
    "preprocess": (op_preprocess, schemas.PreprocessRequest, schemas.PreprocessResponse, "/preprocess"),
    "mip": (op_mip, schemas.MipRequest, schemas.MipResponse, "/mip"),
    "debrain": (op_debrain, schemas.DebrainRequest, schemas.DebrainResponse, "/debrain"),
    "gate": (op_gate, schemas.GateRequest, schemas.GateResponse, "/gate"),
    "fuse": (op_fuse, schemas.FuseRequest, schemas.FuseResponse, "/fuse"),
    "postprocess": (op_postprocess, schemas.PostprocessRequest, schemas.PostprocessResponse, "/postprocess"),
    "evaluate": (op_evaluate, schemas.EvaluateRequest, schemas.EvaluateResponse, "/evaluate"),
    "split": (op_split, schemas.SplitRequest, schemas.SplitResponse, "/split"),
    "run": (op_run, schemas.RunRequest, schemas.RunResponse, "/run"),
}


def dispatch(name: str, request: BaseModel, server: str | None) -> BaseModel:
    """Run an operation in-process, or POST it to ``server`` when given."""
    handler, _, response_model, route = _OPERATIONS[name]
    if server is None:
        return handler(request)
    url = server.rstrip("/") + route
    response = httpx.post(url, json=request.model_dump(mode="json"), timeout=600.0)
    if response.status_code >= 400:
        try:
            err = response.json().get("error", {})
        except ValueError:
            err = {}
        kind = err.get("kind", "config")
        raise _REMOTE_ERRORS.get(kind, PetfuseError)(err.get("detail", response.text))
    return response_model.model_validate(response.json())


def parse_boundary(text: str) -> dict:
    """Parse ``slices:L,U`` or ``percent:F`` (optionally ``percent:L,U``)."""
    try:
        mode, _, rest = text.partition(":")
        values = [float(v) for v in rest.split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse boundary spec {text!r}") from exc
    if mode not in ("slices", "percent") or not 1 <= len(values) <= 2:
        raise ConfigError(f"boundary spec must look like 'slices:L,U' or 'percent:F', got {text!r}")
    lower = values[0]
    upper = values[1] if len(values) == 2 else values[0]
    return {"mode": mode, "lower": lower, "upper": upper}


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r} as comma-separated numbers") from exc


def build_run_config(args: argparse.Namespace) -> dict:
    """Assemble the run-config document from --config plus flag overrides (flags win)."""
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise DataFormatError(f"{args.config}: invalid config JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise DataFormatError(f"{args.config}: config must be a JSON object")
    else:
        doc = {}
    doc.setdefault("gate", {})
    doc.setdefault("fusion", {})
    doc.setdefault("postprocess", {})
    doc.setdefault("metrics", {})
    if args.input_dir:
        cases = discover_cases(args.input_dir)
        doc["cases"] = [
            {
                "study_id": c.study_id,
                "pet": c.pet,
                "ct": c.ct,
                "gt": c.gt,
                "prob_volumes": list(c.prob_volumes),
            }
            for c in cases
        ]
    if args.output_dir:
        doc["output_dir"] = args.output_dir
    if args.score_file:
        doc["gate"]["score_file"] = args.score_file
    if args.baseline_weights:
        doc["gate"]["baseline_weights"] = args.baseline_weights
    if args.gamma is not None:
        doc["gate"]["gamma"] = args.gamma
    if args.members:
        doc["gate"]["members"] = [m for m in args.members.split(",") if m]
    if args.debrain_threshold is not None:
        doc["gate"]["debrain_threshold"] = args.debrain_threshold
    if args.fusion_weights:
        doc["fusion"]["weights"] = _csv_floats(args.fusion_weights)
    if args.binarize_threshold is not None:
        doc["fusion"]["binarize_threshold"] = args.binarize_threshold
    if args.boundary:
        doc["postprocess"]["boundary"] = parse_boundary(args.boundary)
    if args.min_voxels is not None:
        doc["postprocess"]["min_voxels"] = args.min_voxels
    if args.connectivity is not None:
        doc["metrics"]["connectivity"] = args.connectivity
    if args.unit:
        doc["metrics"]["unit"] = args.unit
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.workers is not None:
        doc["workers"] = args.workers
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="petfuse", description=__doc__)
    parser.add_argument("--version", action="version", version=f"petfuse {__version__}")
    parser.add_argument("--server", help="base URL of a running service; defaults to in-process execution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize the PET/CT channels, optionally crop to foreground")
    p.add_argument("--pet", required=True)
    p.add_argument("--ct", required=True)
    p.add_argument("--label")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--p-low", type=float, default=0.5)
    p.add_argument("--p-high", type=float, default=99.5)
    p.add_argument("--crop", action="store_true")
    p.add_argument("--crop-channel", choices=["pet", "ct"], default="ct")
    p.add_argument("--crop-threshold", type=float, default=0.05)
    p.add_argument("--sample-patches", type=int, default=0, help="draw this many patches after normalization")
    p.add_argument("--patch-dims", default="96,96,96", help="patch size as nx,ny,nz")
    p.add_argument("--p-lesion", type=float, default=2.0 / 3.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("mip", help="maximum intensity projection along one axis")
    p.add_argument("--volume", required=True)
    p.add_argument("--axis", choices=["X", "Y", "Z"], required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("debrain", help="remove the largest suprathreshold uptake component")
    p.add_argument("--volume", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--debrain-threshold", type=float, default=3.0)
    p.add_argument("--connectivity", type=int, choices=[6, 18, 26], default=18)

    p = sub.add_parser("gate", help="classifier-ensemble healthy/diseased verdict for one study")
    p.add_argument("--study-id", required=True)
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--members", help="comma-separated classifier ids (default: canonical 8)")
    p.add_argument("--score-file")
    p.add_argument("--pet")
    p.add_argument("--baseline-weights")
    p.add_argument("--debrain-threshold", type=float, default=3.0)
    p.add_argument("--connectivity", type=int, choices=[6, 18, 26], default=18)

    p = sub.add_parser("fuse", help="late-fuse probability volumes, optionally binarize")
    p.add_argument("--inputs", required=True, help="comma-separated probability volume paths")
    p.add_argument("--output", required=True)
    p.add_argument("--fusion-weights")
    p.add_argument("--binarize-threshold", type=float)
    p.add_argument("--mask-output")

    p = sub.add_parser("postprocess", help="zero z boundaries and suppress tiny predictions")
    p.add_argument("--mask", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--boundary", help="slices:L,U or percent:F")
    p.add_argument("--min-voxels", type=int, default=10)
    p.add_argument("--per-component", action="store_true")
    p.add_argument("--connectivity", type=int, choices=[6, 18, 26], default=18)

    p = sub.add_parser("evaluate", help="Dice / FPV / FNV of a prediction against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--connectivity", type=int, choices=[6, 18, 26], default=18)
    p.add_argument("--unit", choices=["ml", "mm3"], default="ml")
    p.add_argument("--output", help="optional report JSON path")

    p = sub.add_parser("split", help="grouped stratified k-fold assignment from a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="optional split JSON path")

    p = sub.add_parser("run", help="run the full pipeline over a batch of cases")
    p.add_argument("--config", help="run-config JSON; flags override its fields")
    p.add_argument("--input-dir", help="discover cases from one subdirectory per study")
    p.add_argument("--output-dir")
    p.add_argument("--score-file")
    p.add_argument("--baseline-weights")
    p.add_argument("--gamma", type=float)
    p.add_argument("--members")
    p.add_argument("--debrain-threshold", type=float)
    p.add_argument("--fusion-weights")
    p.add_argument("--binarize-threshold", type=float)
    p.add_argument("--boundary", help="slices:L,U or percent:F")
    p.add_argument("--min-voxels", type=int)
    p.add_argument("--connectivity", type=int, choices=[6, 18, 26])
    p.add_argument("--unit", choices=["ml", "mm3"])
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8420)

    return parser


def _build_request(args: argparse.Namespace) -> BaseModel:
    if args.command == "preprocess":
        return schemas.PreprocessRequest(
            pet=args.pet,
            ct=args.ct,
            label=args.label,
            output_dir=args.output_dir,
            p_low=args.p_low,
            p_high=args.p_high,
            crop=args.crop,
            crop_channel=args.crop_channel,
            crop_threshold=args.crop_threshold,
            sample_patches=args.sample_patches,
            patch_dims=[int(v) for v in _csv_floats(args.patch_dims)],
            p_lesion=args.p_lesion,
            seed=args.seed,
        )
    if args.command == "mip":
        return schemas.MipRequest(volume=args.volume, axis=args.axis, output=args.output)
    if args.command == "debrain":
        return schemas.DebrainRequest(
            volume=args.volume,
            output=args.output,
            suv_threshold=args.debrain_threshold,
            connectivity=args.connectivity,
        )
    if args.command == "gate":
        return schemas.GateRequest(
            study_id=args.study_id,
            gamma=args.gamma,
            members=[m for m in args.members.split(",") if m] if args.members else None,
            score_file=args.score_file,
            pet=args.pet,
            baseline_weights=args.baseline_weights,
            debrain_threshold=args.debrain_threshold,
            connectivity=args.connectivity,
        )
    if args.command == "fuse":
        return schemas.FuseRequest(
            inputs=[p for p in args.inputs.split(",") if p],
            output=args.output,
            weights=_csv_floats(args.fusion_weights) if args.fusion_weights else None,
            binarize_threshold=args.binarize_threshold,
            mask_output=args.mask_output,
        )
    if args.command == "postprocess":
        boundary = parse_boundary(args.boundary) if args.boundary else {"mode": "slices", "lower": 0, "upper": 0}
        return schemas.PostprocessRequest(
            mask=args.mask,
            output=args.output,
            boundary_mode=boundary["mode"],
            boundary_lower=boundary["lower"],
            boundary_upper=boundary["upper"],
            min_voxels=args.min_voxels,
            per_component=args.per_component,
            connectivity=args.connectivity,
        )
    if args.command == "evaluate":
        return schemas.EvaluateRequest(
            pred=args.pred, gt=args.gt, connectivity=args.connectivity, unit=args.unit, output=args.output
        )
    if args.command == "split":
        return schemas.SplitRequest(records=args.records, k=args.k, seed=args.seed, output=args.output)
    if args.command == "run":
        return schemas.RunRequest(config=build_run_config(args))
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("PETFUSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))

    if args.command == "serve":
        import uvicorn

        uvicorn.run("petfuse.service:app", host=args.host, port=args.port)
        return EXIT_OK

    try:
        request = _build_request(args)
        response = dispatch(args.command, request, args.server)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, DataFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractError as exc:
        print(f"contract error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    print(json.dumps(response.model_dump(mode="json"), indent=2, sort_keys=True))
    if isinstance(response, schemas.RunResponse) and response.n_failed > 0:
        return EXIT_CASE_FAILURES
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
