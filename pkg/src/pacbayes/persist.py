"""Deterministic JSON/CSV output and run manifests.

Floats are written with Python's shortest round-trip representation, so a
re-loaded file reproduces every value bit for bit. Keys are sorted and no
timestamps are recorded: equal inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import CSV_COLUMNS, BoundReport
from .simulation import TrialRecord, ValidityReport

__all__ = [
    "to_jsonable",
    "dumps",
    "write_json",
    "read_json",
    "csv_text",
    "write_csv",
    "write_bound_report",
    "read_bound_report",
    "write_trace",
    "write_validity",
    "read_validity_report",
    "config_hash",
    "write_manifest",
]

TRACE_COLUMNS = ("step", "objective", "bound", "theta_norm")


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj) -> str:
    # non-finite floats are written as Infinity/NaN, which json.loads accepts
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    return str(to_jsonable(v))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, rows), encoding="utf-8")
    return path


def write_bound_report(out_dir, report: BoundReport, stem="bound") -> list[Path]:
    out_dir = Path(out_dir)
    return [write_json(out_dir / f"{stem}.json", report.to_dict()),
            write_csv(out_dir / f"{stem}.csv", CSV_COLUMNS, [report.csv_row()])]


def read_bound_report(path) -> BoundReport:
    return BoundReport.from_dict(read_json(path))


def write_trace(path, trace) -> Path:
    rows = [(c.step, c.objective, c.bound, c.theta_norm) for c in trace.checkpoints]
    return write_csv(path, TRACE_COLUMNS, rows)


def write_validity(out_dir, report: ValidityReport, trials: list[TrialRecord],
                   stem="validity") -> list[Path]:
    out_dir = Path(out_dir)
    return [write_json(out_dir / f"{stem}.json", report.to_dict()),
            write_csv(out_dir / f"{stem}_trials.csv", TrialRecord.CSV_COLUMNS,
                      [t.csv_row() for t in trials])]


def read_validity_report(path) -> ValidityReport:
    return ValidityReport.from_dict(read_json(path))


def config_hash(config) -> str:
    canon = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_manifest(out_dir, config: dict, seeds: dict, files) -> Path:
    """Manifest: config hash, seeds, version and the sha256 of every output file."""
    out_dir = Path(out_dir)
    digests = {Path(f).name: hashlib.sha256(Path(f).read_bytes()).hexdigest()
               for f in sorted(files, key=lambda p: Path(p).name)}
    manifest = {"artifact_version": __version__,
                "config_sha256": config_hash({"config": config, "seeds": seeds,
                                              "version": __version__}),
                "seeds": seeds, "files": digests}
    return write_json(out_dir / "manifest.json", manifest)
