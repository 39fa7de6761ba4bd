"""Structured experiment reports and CSV curve export.

A report has a canonical section (config echo, metric entries, seed
lineage, versions) that is serialized with sorted keys and fixed
separators, so identical runs produce byte-identical canonical bytes, and
a meta section (wall time, timestamps) that is allowed to vary.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MetricEntry:
    name: str
    value: float
    stderr: float = float("nan")
    verdict: str = ""
    anchor: str = "plumbing"

    def to_doc(self):
        return {"name": self.name, "value": self.value, "stderr": self.stderr,
                "verdict": self.verdict, "anchor": self.anchor}


@dataclass
class ExperimentReport:
    config: dict
    metrics: list = field(default_factory=list)
    seed_lineage: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def add(self, name, value, stderr=float("nan"), verdict="",
            anchor="plumbing"):
        self.metrics.append(MetricEntry(name, float(value), float(stderr),
                                        verdict, anchor))

    def entry(self, name) -> MetricEntry:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def canonical_doc(self) -> dict:
        return {
            "config": self.config,
            "metrics": [m.to_doc() for m in self.metrics],
            "seed_lineage": self.seed_lineage,
            "versions": self.versions,
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.canonical_doc(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")


def default_versions() -> dict:
    import numba
    import scipy

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "towerlab": "0.1.0",
    }


def report_to_file(report: ExperimentReport, path) -> None:
    doc = {
        "canonical": report.canonical_doc(),
        "meta": {"wall_time_s": report.wall_time_s},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def report_from_file(path) -> ExperimentReport:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    can = doc["canonical"]
    rep = ExperimentReport(config=can["config"],
                           seed_lineage=can.get("seed_lineage", {}),
                           versions=can.get("versions", {}),
                           wall_time_s=doc.get("meta", {}).get("wall_time_s", 0.0))
    for m in can["metrics"]:
        rep.metrics.append(MetricEntry(m["name"], m["value"], m["stderr"],
                                       m["verdict"], m["anchor"]))
    return rep


def curve_to_csv(path, xs, values, stderrs=None, flags=None) -> None:
    """Curve export: columns x, value, stderr, flag."""
    n = len(xs)
    stderrs = stderrs if stderrs is not None else [float("nan")] * n
    flags = flags if flags is not None else [""] * n
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "value", "stderr", "flag"])
        for row in zip(xs, values, stderrs, flags):
            w.writerow([repr(float(row[0])), repr(float(row[1])),
                        repr(float(row[2])), row[3]])
