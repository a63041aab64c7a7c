"""JSON case and report files.

A case file holds one network, its load scenarios and the solver settings::

    {
      "format_version": 1,
      "kind": "case",
      "name": "...", "notes": "...",
      "network": {"substation": .., "u0": .., "base_kva": .., "n_periods": ..,
                  "nodes": [{"name", "rho", "u_min", "u_max"}, ...],
                  "lines": [{"name", "from", "to", "r", "x", "p_max", "q_max", "cost"}, ...],
                  "dgs": [{"name", "node", "p_max", "p_min", "theta_min", "theta_max", "cost"}, ...],
                  "ess": [{"name", "node", "p_max", "q_max", "eta", "capacity"}, ...],
                  "vulnerable_lines": [...], "vulnerable_dgs": [...]},
      "scenarios": [{"probability": .., "pd": [[..per period..] per node],
                     "qd": [...], "e0": [..per ESS..]}, ...],
      "ddu": {"k_lines", "k_dgs", "max_hardened" | "budget"},
      "algorithm": {...AlgorithmConfig fields...}
    }

Load rows follow the order of ``network.nodes``. Reports use the same
envelope with ``"kind": "report"``. Keys are written in a fixed order, so a
report is byte-identical across runs with the same inputs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .cases import Case
from .core import (
    DG,
    ESS,
    AlgorithmConfig,
    DduConfig,
    Line,
    Network,
    Node,
    Scenario,
    ScenarioSet,
    ValidationError,
)

FORMAT_VERSION = 1


class CaseFormatError(ValueError):
    """The file is not valid JSON or does not follow the case schema."""


def _num(v) -> float:
    return float(v)


def network_to_dict(net: Network) -> dict:
    return {
        "name": net.name,
        "substation": net.substation,
        "u0": net.u0,
        "base_kva": net.base_kva,
        "n_periods": net.n_periods,
        "nodes": [{"name": n.name, "rho": n.rho, "u_min": n.u_min, "u_max": n.u_max} for n in net.nodes],
        "lines": [
            {
                "name": ln.name,
                "from": ln.from_node,
                "to": ln.to_node,
                "r": ln.r,
                "x": ln.x,
                "p_max": ln.p_max,
                "q_max": ln.q_max,
                "cost": ln.cost,
            }
            for ln in net.lines
        ],
        "dgs": [
            {
                "name": g.name,
                "node": g.node,
                "p_max": g.p_max,
                "p_min": g.p_min,
                "theta_min": g.theta_min,
                "theta_max": g.theta_max,
                "cost": g.cost,
            }
            for g in net.dgs
        ],
        "ess": [
            {"name": e.name, "node": e.node, "p_max": e.p_max, "q_max": e.q_max, "eta": e.eta, "capacity": e.capacity}
            for e in net.ess
        ],
        "vulnerable_lines": list(net.vulnerable_lines),
        "vulnerable_dgs": list(net.vulnerable_dgs),
    }


def network_from_dict(d: dict) -> Network:
    nodes = tuple(Node(str(n["name"]), _num(n.get("rho", 1.0)), _num(n.get("u_min", 0.95)), _num(n.get("u_max", 1.05))) for n in d["nodes"])
    lines = tuple(
        Line(
            str(ln["from"]),
            str(ln["to"]),
            _num(ln["r"]),
            _num(ln["x"]),
            _num(ln["p_max"]),
            _num(ln["q_max"]),
            _num(ln.get("cost", 1.0)),
            str(ln.get("name", "")),
        )
        for ln in d["lines"]
    )
    dgs = []
    for g in d.get("dgs", []):
        kw = {k: _num(g[k]) for k in ("p_min", "theta_min", "theta_max", "cost") if k in g}
        dgs.append(DG(str(g["name"]), str(g["node"]), _num(g["p_max"]), **kw))
    ess = []
    for e in d.get("ess", []):
        kw = {k: _num(e[k]) for k in ("eta", "capacity") if k in e}
        ess.append(ESS(str(e["name"]), str(e["node"]), _num(e["p_max"]), _num(e["q_max"]), **kw))
    return Network(
        nodes=nodes,
        substation=str(d["substation"]),
        lines=lines,
        dgs=tuple(dgs),
        ess=tuple(ess),
        vulnerable_lines=tuple(map(str, d.get("vulnerable_lines", []))),
        vulnerable_dgs=tuple(map(str, d.get("vulnerable_dgs", []))),
        u0=_num(d.get("u0", 1.0)),
        base_kva=_num(d.get("base_kva", 1000.0)),
        n_periods=int(d.get("n_periods", 1)),
        name=str(d.get("name", "network")),
    )


def scenarios_to_list(scen: ScenarioSet) -> list:
    return [
        {"probability": s.probability, "pd": s.pd.tolist(), "qd": s.qd.tolist(), "e0": s.e0.tolist()} for s in scen
    ]


def scenarios_from_list(items: list, normalize: bool = False) -> ScenarioSet:
    scen = [
        Scenario(
            _num(s["probability"]),
            np.array(s["pd"], dtype=float),
            np.array(s["qd"], dtype=float),
            np.array(s.get("e0", []), dtype=float),
        )
        for s in items
    ]
    return ScenarioSet.normalized(scen) if normalize else ScenarioSet(tuple(scen))


def ddu_to_dict(cfg: DduConfig) -> dict:
    out = {"k_lines": cfg.k_lines, "k_dgs": cfg.k_dgs}
    if cfg.cardinality_mode:
        out["max_hardened"] = cfg.max_hardened
    else:
        out["budget"] = cfg.budget
    return out


def ddu_from_dict(d: dict) -> DduConfig:
    return DduConfig(
        k_lines=int(d["k_lines"]),
        k_dgs=int(d.get("k_dgs", 0)),
        budget=None if d.get("budget") is None else _num(d["budget"]),
        max_hardened=None if d.get("max_hardened") is None else int(d["max_hardened"]),
    )


def algorithm_from_dict(d: dict) -> AlgorithmConfig:
    known = {f.name for f in fields(AlgorithmConfig)}
    unknown = set(d) - known
    if unknown:
        raise CaseFormatError(f"unknown algorithm settings: {sorted(unknown)}")
    return AlgorithmConfig(**d)


def case_to_dict(case: Case) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "case",
        "name": case.network.name,
        "notes": case.notes,
        "network": network_to_dict(case.network),
        "scenarios": scenarios_to_list(case.scenarios),
        "ddu": ddu_to_dict(case.ddu),
        "algorithm": asdict(case.algorithm),
    }


def _check_envelope(d, kind: str) -> None:
    if not isinstance(d, dict):
        raise CaseFormatError("top level must be a JSON object")
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise CaseFormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    if d.get("kind", kind) != kind:
        raise CaseFormatError(f"expected a {kind} file, got kind={d.get('kind')!r}")


def case_from_dict(d: dict, normalize: bool = False) -> Case:
    _check_envelope(d, "case")
    try:
        net = network_from_dict(d["network"])
        scen = scenarios_from_list(d["scenarios"], normalize=normalize)
        ddu = ddu_from_dict(d["ddu"])
        alg = algorithm_from_dict(d.get("algorithm", {}))
    except KeyError as exc:
        raise CaseFormatError(f"missing field {exc.args[0]!r}") from exc
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CaseFormatError):
            raise
        raise CaseFormatError(f"malformed value: {exc}") from exc
    return Case(net, scen, ddu, alg, str(d.get("notes", "")))


def dumps(obj: dict) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def loads(text: str, source: str = "<string>") -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_case(path, normalize: bool = False) -> Case:
    path = Path(path)
    return case_from_dict(loads(path.read_text(), str(path)), normalize=normalize)


def save_case(case: Case, path) -> None:
    Path(path).write_text(dumps(case_to_dict(case)))


def report_to_dict(report, timings: bool = False, case_name: str = "") -> dict:
    out = {"format_version": FORMAT_VERSION, "kind": "report", "case": case_name}
    out.update(report.to_dict(timings=timings))
    return _finite(out)


def _finite(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, np.floating):
        return _finite(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps_report(report, timings: bool = False, case_name: str = "") -> str:
    return dumps(report_to_dict(report, timings=timings, case_name=case_name))
