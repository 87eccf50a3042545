"""Scenario documents: plant, node roster, topology, traffic, attack script and defenses.

Schema (JSON)::

    {
      "name": str, "duration": float > 0, "seed": int, "tick": float (trace period, default 0.1),
      "case": bundled case name | inline case document,
      "breakers": [{"id", "line" | "generator", "closed": bool}],
      "relays": {relay id: "good" | "bad"},
      "points": {point id: {"source": "breaker:ID" | "relay:ID" | "flow:LINE" | "load:ID" | "gen:ID",
                            "kind": "binary" | "analog"}},
      "nodes": [{"id", "kind": ied|plc|scada|gateway|decoy|attacker, "logical", "hardware",
                 "publishes": [{"to": [ids], "period", "phase", "protocol", "function", "points": [ids]}],
                 "breakers": [breaker ids actuated by this IED], "program": [PLC rules], "twin": id}],
      "switches": [ids],
      "links": [[a, b] | [a, b, latency_seconds]],
      "default_latency": 0.001,
      "plant_events": [{"t", "breaker", "action": "open" | "close"}],
      "attacks": [{"t", "action": inject | modify | replay | drop | redirect_path | touch_decoy
                          | fdi_point | fdi_vector, ...}],
      "defense": {"ids": bool, "bitw": bool | [node ids], "gateway": bool, "reverse": bool,
                  "gateway_delay": 0.1, "reverse_delay": 0.5, "ids_window": 1.0,
                  "thresholds": {level: value}, "decoys": [{"twin": id, "k": 10}],
                  "mtd": {"mode": "event" | "periodic", "delay", "interval", "plans": [...] | "search",
                          "bounds": [lo, hi]}},
      "estimator": {"period", "sigma", "noise", "p"}
    }

PLC rules: ``{"name", "when": [[point, op, value], ...], "then": {"target", "breaker", "action"}}``
with values given as numbers or ``open/closed/good/bad``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..gridcore import GridCase, bundled_case, load_case
from .plant import PlcRule, symbol_value

NODE_KINDS = ("ied", "plc", "scada", "gateway", "decoy", "attacker", "bitw_wrapper")
ATTACK_ACTIONS = ("inject", "modify", "replay", "drop", "redirect_path", "touch_decoy", "fdi_point", "fdi_vector")
DEFAULT_LATENCY = 0.001
DEFAULT_DECOYS = 10

_SCENARIO_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class SimNode:
    id: str
    kind: str
    logical: str
    hardware: str
    publishes: tuple[dict, ...] = ()
    breakers: tuple[str, ...] = ()
    program: tuple[PlcRule, ...] = ()
    twin: str | None = None
    inner: str | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    document: Mapping[str, Any] = field(repr=False)
    case: GridCase = field(repr=False)
    nodes: tuple[SimNode, ...] = ()
    duration: float = 1.0
    seed: int = 0

    @property
    def defense(self) -> dict[str, Any]:
        return dict(self.document.get("defense", {}))

    @property
    def attacks(self) -> list[dict]:
        return list(self.document.get("attacks", []))

    def node(self, node_id: str) -> SimNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(dict(self.document))

    def canonical_json(self) -> str:
        return json.dumps(self.document, sort_keys=True, separators=(",", ":"))

    def replace(self, **changes) -> "Scenario":
        doc = self.to_dict()
        doc.update(changes)
        return load_scenario(doc)

    def strip_attacks(self) -> "Scenario":
        return self.replace(attacks=[])

    def with_defense(self, **changes) -> "Scenario":
        d = self.defense
        d.update(changes)
        return self.replace(defense=d)


def _req(d: Mapping, key: str, path: str):
    if not isinstance(d, Mapping) or key not in d:
        raise ScenarioError(path, f"missing required field {key!r}")
    return d[key]


def _decoy_nodes(twin: SimNode, k: int, start_index: int) -> list[SimNode]:
    out = []
    for i in range(1, k):
        idx = start_index + i
        out.append(SimNode(f"{twin.id}-decoy{i}", "decoy", f"10.0.1.{idx}", f"02:00:00:00:01:{idx:02x}", twin=twin.id))
    return out


def load_scenario(document: str | Path | Mapping[str, Any]) -> Scenario:
    """Parse and validate a scenario; every cross-reference must resolve."""
    if isinstance(document, Path):
        try:
            doc = json.loads(document.read_text())
        except OSError as exc:
            raise ScenarioError(str(document), f"cannot read scenario ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError(str(document), f"invalid JSON: {exc}") from None
    elif isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError("<document>", f"invalid JSON: {exc}") from None
    else:
        doc = copy.deepcopy(dict(document))
    if not isinstance(doc, Mapping):
        raise ScenarioError("<document>", "top level must be an object")

    duration = float(_req(doc, "duration", ""))
    if not duration > 0:
        raise ScenarioError("duration", "duration must be positive")
    raw_case = _req(doc, "case", "")
    case = bundled_case(raw_case) if isinstance(raw_case, str) else load_case(raw_case)

    lines = {ln.id for ln in case.lines}
    gens = {g.id for g in case.generators}
    load_ids = {ld.id for ld in case.loads}
    breakers = {}
    for i, b in enumerate(doc.get("breakers", [])):
        p = f"breakers[{i}]"
        bid = str(_req(b, "id", p))
        if "line" in b and b["line"] not in lines:
            raise ScenarioError(f"{p}.line", f"unknown line {b['line']!r}")
        if "generator" in b and b["generator"] not in gens:
            raise ScenarioError(f"{p}.generator", f"unknown generator {b['generator']!r}")
        if ("line" in b) == ("generator" in b):
            raise ScenarioError(p, "breaker must switch exactly one line or generator")
        breakers[bid] = b
    relays = doc.get("relays", {})
    for rid, v in relays.items():
        try:
            symbol_value(v)
        except ValueError as exc:
            raise ScenarioError(f"relays.{rid}", str(exc)) from None

    points = doc.get("points", {})
    for pid, pdef in points.items():
        src = str(_req(pdef, "source", f"points.{pid}"))
        kind, _, ref = src.partition(":")
        ok = {"breaker": breakers, "relay": relays, "flow": lines, "load": load_ids, "gen": gens}.get(kind)
        if ok is None or ref not in ok:
            raise ScenarioError(f"points.{pid}.source", f"unresolved point source {src!r}")
        if pdef.get("kind", "binary" if kind in ("breaker", "relay", "load") else "analog") not in ("binary", "analog"):
            raise ScenarioError(f"points.{pid}.kind", "kind must be 'binary' or 'analog'")

    nodes: list[SimNode] = []
    for i, n in enumerate(_req(doc, "nodes", "")):
        p = f"nodes[{i}]"
        nid = str(_req(n, "id", p))
        kind = str(_req(n, "kind", p))
        if kind not in NODE_KINDS:
            raise ScenarioError(f"{p}.kind", f"unknown node kind {kind!r}")
        program = []
        for j, r in enumerate(n.get("program", [])):
            try:
                program.append(PlcRule.from_dict(r, j))
            except (KeyError, ValueError, TypeError) as exc:
                raise ScenarioError(f"{p}.program[{j}]", f"invalid rule ({exc})") from None
        nodes.append(SimNode(
            nid, kind, str(n.get("logical", f"10.0.0.{i + 1}")), str(n.get("hardware", f"02:00:00:00:00:{i + 1:02x}")),
            tuple(n.get("publishes", ())), tuple(n.get("breakers", ())), tuple(program), n.get("twin"), n.get("inner"),
        ))
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ScenarioError("nodes", "duplicate node ids")
    switches = [str(s) for s in doc.get("switches", [])]
    if set(switches) & set(ids):
        raise ScenarioError("switches", "switch ids collide with node ids")

    defense = doc.get("defense", {})
    by_id = {n.id: n for n in nodes}
    for j, dcfg in enumerate(defense.get("decoys", [])):
        twin = by_id.get(dcfg.get("twin"))
        if twin is None:
            raise ScenarioError(f"defense.decoys[{j}].twin", f"unknown node {dcfg.get('twin')!r}")
        k = int(dcfg.get("k", DEFAULT_DECOYS))
        if k < 1:
            raise ScenarioError(f"defense.decoys[{j}].k", "k must be at least 1")
        nodes.extend(_decoy_nodes(twin, k, 10 * (j + 1)))
    by_id = {n.id: n for n in nodes}
    known = set(by_id) | set(switches)

    for i, ln in enumerate(doc.get("links", [])):
        if not 2 <= len(ln) <= 3 or ln[0] not in known or ln[1] not in known:
            raise ScenarioError(f"links[{i}]", f"unresolved link {ln!r}")
        if len(ln) == 3 and not float(ln[2]) >= 0:
            raise ScenarioError(f"links[{i}]", "latency must be nonnegative")

    for n in nodes:
        if n.kind == "decoy" and (n.publishes or n.program):
            raise ScenarioError(f"nodes.{n.id}", "decoys never originate traffic")
        if n.kind == "bitw_wrapper" and n.inner not in by_id:
            raise ScenarioError(f"nodes.{n.id}.inner", f"wrapper's inner node {n.inner!r} does not exist")
        for j, pub in enumerate(n.publishes):
            p = f"nodes.{n.id}.publishes[{j}]"
            for dst in _req(pub, "to", p):
                if dst not in by_id:
                    raise ScenarioError(f"{p}.to", f"unknown node {dst!r}")
            if not float(_req(pub, "period", p)) > 0:
                raise ScenarioError(f"{p}.period", "period must be positive")
            for pid in pub.get("points", ()):
                if pid not in points:
                    raise ScenarioError(f"{p}.points", f"undefined point {pid!r}")
        for b in n.breakers:
            if b not in breakers:
                raise ScenarioError(f"nodes.{n.id}.breakers", f"unknown breaker {b!r}")
        for rule in n.program:
            for pid in rule.points:
                if pid not in points:
                    raise ScenarioError(f"nodes.{n.id}.program.{rule.name}", f"undefined point {pid!r}")
            cmd = rule.command
            if cmd.breaker not in breakers:
                raise ScenarioError(f"nodes.{n.id}.program.{rule.name}", f"unknown breaker {cmd.breaker!r}")
            if cmd.target not in by_id:
                raise ScenarioError(f"nodes.{n.id}.program.{rule.name}", f"unknown target {cmd.target!r}")

    for i, ev in enumerate(doc.get("plant_events", [])):
        p = f"plant_events[{i}]"
        if _req(ev, "breaker", p) not in breakers:
            raise ScenarioError(f"{p}.breaker", f"unknown breaker {ev['breaker']!r}")
        if _req(ev, "action", p) not in ("open", "close"):
            raise ScenarioError(f"{p}.action", "action must be 'open' or 'close'")
        if not 0 <= float(_req(ev, "t", p)):
            raise ScenarioError(f"{p}.t", "event time must be nonnegative")

    for i, atk in enumerate(doc.get("attacks", [])):
        p = f"attacks[{i}]"
        action = _req(atk, "action", p)
        if action not in ATTACK_ACTIONS:
            raise ScenarioError(f"{p}.action", f"unknown attack action {action!r}")
        if not 0 <= float(_req(atk, "t", p)):
            raise ScenarioError(f"{p}.t", "attack time must be nonnegative")
        for key in ("attacker", "dst", "target"):
            if key in atk and atk[key] not in by_id:
                raise ScenarioError(f"{p}.{key}", f"unknown node {atk[key]!r}")
        for nid in atk.get("pair", ()):
            if nid not in by_id:
                raise ScenarioError(f"{p}.pair", f"unknown node {nid!r}")
        if action in ("modify", "fdi_point") and _req(atk, "point", p) not in points:
            raise ScenarioError(f"{p}.point", f"undefined point {atk['point']!r}")
        if action == "touch_decoy" and by_id[_req(atk, "target", p)].kind != "decoy":
            raise ScenarioError(f"{p}.target", "target is not a decoy")
        if action == "redirect_path" and len(_req(atk, "pair", p)) != 2:
            raise ScenarioError(f"{p}.pair", "pair must name two nodes")
        if action == "fdi_vector" and "estimator" not in doc:
            raise ScenarioError(p, "fdi_vector needs an estimator section")
    if any(a["action"] in ("modify", "replay", "drop", "redirect_path", "inject", "touch_decoy")
           for a in doc.get("attacks", [])) and not any(n.kind == "attacker" for n in nodes):
        raise ScenarioError("attacks", "network attacks need an attacker node")

    bitw = defense.get("bitw", False)
    if isinstance(bitw, list):
        for nid in bitw:
            if nid not in by_id:
                raise ScenarioError("defense.bitw", f"unknown node {nid!r}")
    mtd = defense.get("mtd")
    if mtd is not None and mtd.get("mode") not in ("event", "event_triggered", "periodic"):
        raise ScenarioError("defense.mtd.mode", f"unknown MTD mode {mtd.get('mode')!r}")

    return Scenario(str(doc.get("name", "")), doc, case, tuple(nodes), duration, int(doc.get("seed", 0)))


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in _SCENARIO_DIR.glob("*.json"))


def bundled_scenario(name: str) -> Scenario:
    path = _SCENARIO_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return load_scenario(path)


def resolve_scenario(ref: str | Path) -> Scenario:
    """A bundled scenario name or a path to a scenario file."""
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise FileNotFoundError(f"scenario file {str(p)!r} not found")
        return load_scenario(p)
    return bundled_scenario(str(ref))
