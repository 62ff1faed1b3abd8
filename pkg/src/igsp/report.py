"""JSON serialization of registration reports and ground truth.

Every emitted report validates against the versioned schema shipped in
``schemas/igsp-report-1.json``. Matrices are stored as 16 row-major numbers.
Non-finite reals (e.g. the ICP threshold, which does not exist) become null.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .engine import IterationRecord, RegistrationReport
from .evaluation import EvalResult
from .geometry import RigidTransform
from .scenes import GroundTruth

SCHEMA_ID = "igsp-report/1"
GT_SCHEMA_ID = "igsp-ground-truth/1"
CONVENTION = "transform maps target coordinates into the source frame (x_source = R x_target + t)"


class ReportError(ValueError):
    pass


def _real(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _plain(obj):
    """Make config echoes JSON-safe (tuples, numpy scalars, non-finite floats)."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _real(obj)
    return obj


def matrix_to_list(T: RigidTransform) -> list[float]:
    return [float(v) for v in T.matrix().reshape(-1)]


def matrix_from_list(values) -> RigidTransform:
    M = np.asarray(values, dtype=np.float64)
    if M.size != 16:
        raise ReportError("transform must have 16 entries")
    return RigidTransform.from_matrix(M.reshape(4, 4))


def record_to_dict(r: IterationRecord, include_pairs: bool = True) -> dict:
    out = {
        "k": r.k, "transform": matrix_to_list(r.transform), "delta_r": r.delta_r, "delta_t": r.delta_t,
        "threshold": _real(r.threshold), "w_ed": r.w_ed, "w_fd": r.w_fd, "mean_ed": r.mean_ed,
        "mean_fd": r.mean_fd, "match_count": r.match_count, "unmatched_source": r.unmatched_source,
        "unmatched_target": r.unmatched_target, "energy": _real(r.energy), "total_cost": _real(r.total_cost),
        "flagged": bool(r.flagged), "seconds": r.seconds,
    }
    if include_pairs:
        out["pairs"] = [[int(i), int(j)] for i, j in r.pairs]
    return out


def report_to_dict(report: RegistrationReport, evaluation: EvalResult | None = None,
                   include_pairs: bool = True, include_keypoints: bool = True, inputs: dict | None = None) -> dict:
    out = {
        "schema": SCHEMA_ID,
        "method": report.method,
        "convention": CONVENTION,
        "converged": bool(report.converged),
        "transform": matrix_to_list(report.transform),
        "iterations": report.iterations,
        "timing": {
            "prep_seconds": report.prep_seconds,
            "iteration_seconds": report.iteration_seconds,
            "total_seconds": report.total_seconds,
        },
        "records": [record_to_dict(r, include_pairs) for r in report.records],
        "match": None,
        "config": _plain(report.config),
    }
    m = report.match
    if m is not None:
        out["match"] = {
            "pairs": [[int(i), int(j)] for i, j in m.pairs] if include_pairs else [],
            "unmatched_source": [int(i) for i in m.unmatched_source],
            "unmatched_target": [int(j) for j in m.unmatched_target],
            "total_cost": _real(m.total_cost),
            "energy": _real(m.energy),
        }
    if include_keypoints:
        out["keypoints"] = {
            "source": np.asarray(report.source_keypoints, dtype=float).reshape(-1, 3).tolist(),
            "target": np.asarray(report.target_keypoints, dtype=float).reshape(-1, 3).tolist(),
        }
    if inputs:
        out["inputs"] = _plain(inputs)
    if evaluation is not None:
        out["evaluation"] = _plain(evaluation.as_dict())
    return out


@lru_cache(maxsize=1)
def load_schema() -> dict:
    text = resources.files("igsp").joinpath("schemas/igsp-report-1.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_report(doc: dict) -> None:
    """Raise ReportError if ``doc`` does not conform to igsp-report/1."""
    try:
        jsonschema.validate(doc, load_schema())
    except jsonschema.ValidationError as exc:
        raise ReportError(f"report does not match {SCHEMA_ID}: {exc.message}") from exc


def ground_truth_to_dict(gt: GroundTruth) -> dict:
    return {"schema": GT_SCHEMA_ID, "convention": CONVENTION,
            "transform": matrix_to_list(gt.transform), "tolerance": gt.tolerance}


def ground_truth_from_dict(doc: dict) -> GroundTruth:
    if doc.get("schema") != GT_SCHEMA_ID:
        raise ReportError(f"expected schema {GT_SCHEMA_ID}, got {doc.get('schema')!r}")
    return GroundTruth(matrix_from_list(doc["transform"]), float(doc["tolerance"]))


def write_json(path, doc: dict) -> None:
    """Write atomically: a temp file in the same directory is renamed over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, allow_nan=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
