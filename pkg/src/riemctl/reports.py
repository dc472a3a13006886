"""Condition reports, report bundles, and deterministic serialization."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from dataclasses import dataclass, field

import numpy as np

VERDICT_HOLDS = "holds"
VERDICT_VIOLATED = "violated"
VERDICT_INCONCLUSIVE = "inconclusive"


@dataclass
class ConditionReport:
    """Outcome of one optimality-condition evaluation."""

    id: str
    value: float
    tol: float
    verdict: str
    witnesses: list = field(default_factory=list)
    t: float = None

    @staticmethod
    def from_upper_bound(cond_id, value, tol, witnesses=None, t=None):
        """Verdict 'holds' when value <= tol."""
        verdict = VERDICT_HOLDS if value <= tol else VERDICT_VIOLATED
        return ConditionReport(id=cond_id, value=float(value), tol=float(tol),
                               verdict=verdict, witnesses=witnesses or [], t=t)

    def to_dict(self):
        out = {"id": self.id, "value": self.value, "tol": self.tol,
               "verdict": self.verdict, "witnesses": self.witnesses}
        if self.t is not None:
            out["t"] = self.t
        return out


def round_floats(obj, sig=12):
    """Round every float to ``sig`` significant digits for byte-stable serialization."""
    if isinstance(obj, dict):
        return {k: round_floats(v, sig) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, sig) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if x == 0.0 or not np.isfinite(x):
            return 0.0 if x == 0.0 else x
        return float(f"{x:.{sig}e}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return round_floats(obj.tolist(), sig)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(round_floats(obj), sort_keys=True, indent=1)


def config_hash(scenario_doc) -> str:
    payload = json.dumps(round_floats(scenario_doc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ReportBundle:
    """Everything a scenario run produced, with provenance for rerun detection."""

    name: str
    scenario: dict
    geometry_checks: list = field(default_factory=list)
    trajectory_summary: dict = field(default_factory=dict)
    conditions: list = field(default_factory=list)
    slope_tables: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        from . import __version__
        conds = sorted((c.to_dict() if isinstance(c, ConditionReport) else c
                        for c in self.conditions), key=lambda d: (d["id"], d.get("t") or 0.0))
        geo_checks = sorted(self.geometry_checks, key=lambda d: d.get("check", ""))
        return {
            "schema": 1,
            "name": self.name,
            "provenance": {
                "config_hash": config_hash(self.scenario),
                "package_version": __version__,
                "numpy_version": np.__version__,
                "python_version": platform.python_version(),
            },
            "scenario": self.scenario,
            "geometry_checks": geo_checks,
            "trajectory": self.trajectory_summary,
            "conditions": conds,
            "slopes": self.slope_tables,
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def to_csv(self) -> str:
        """Fixed columns: condition_id, t, value, tolerance, verdict."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["condition_id", "t", "value", "tolerance", "verdict"])
        doc = self.to_dict()
        for c in doc["conditions"]:
            t = c.get("t")
            writer.writerow([c["id"], "" if t is None else t, c["value"], c["tol"], c["verdict"]])
        for g in doc["geometry_checks"]:
            verdict = VERDICT_HOLDS if g.get("passed") else VERDICT_VIOLATED
            writer.writerow([g.get("check"), "", g.get("value"), g.get("tol"), verdict])
        return buf.getvalue()

    @property
    def worst_verdict(self) -> str:
        verdicts = [c.verdict if isinstance(c, ConditionReport) else c.get("verdict")
                    for c in self.conditions]
        verdicts += [VERDICT_HOLDS if g.get("passed") else VERDICT_VIOLATED
                     for g in self.geometry_checks]
        if VERDICT_VIOLATED in verdicts:
            return VERDICT_VIOLATED
        if VERDICT_INCONCLUSIVE in verdicts:
            return VERDICT_INCONCLUSIVE
        return VERDICT_HOLDS
