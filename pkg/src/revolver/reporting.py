"""CSV/JSON export of transfer runs."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .transfer.orchestrator import TransferReport

__all__ = ["ExportError", "RunManifest", "export_report", "write_atomic", "PHASE_COLUMNS"]

PHASE_COLUMNS = [
    "phase", "alpha", "epochs_used", "extensions", "env_steps",
    "mean_shaped_reward", "mean_raw_reward", "success_rate", "buffer_removed",
]


class ExportError(OSError):
    pass


@dataclass
class RunManifest:
    command: str
    config_hash: str = ""
    seeds: dict = field(default_factory=dict)
    args: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: str = __version__
    python: str = field(default_factory=platform.python_version)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n"


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8", newline="")
        os.replace(tmp, path)
    except OSError as e:
        raise ExportError(f"cannot write {path}: {e}") from e


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def phase_csv(report: TransferReport) -> str:
    rows = [[getattr(p, c) for c in PHASE_COLUMNS] for p in report.phases]
    return _csv(rows, PHASE_COLUMNS)


def export_report(report: TransferReport, out_dir, manifest: RunManifest | None = None) -> list[Path]:
    """Write report.csv, final_eval.csv and manifest.json; identical inputs give identical bytes."""
    if report.final is None:
        raise ValueError("missing final eval")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ExportError(f"cannot create {out}: {e}") from e
    if not os.access(out, os.W_OK):
        raise ExportError(f"directory {out} is not writable")
    f = report.final
    files = {
        "report.csv": phase_csv(report),
        "final_eval.csv": _csv(
            [[report.method, f.beta, f.episodes, f.mean_reward, f.success_rate, report.env_steps]],
            ["method", "beta", "episodes", "mean_reward", "success_rate", "env_steps"],
        ),
    }
    manifest = manifest or RunManifest("transfer")
    manifest.seeds.setdefault("master", report.seed)
    manifest.timings.setdefault("wall_time_s", round(report.wall_time, 3))
    files["manifest.json"] = manifest.to_json()
    paths = []
    for name, text in files.items():
        write_atomic(out / name, text)
        paths.append(out / name)
    return paths
