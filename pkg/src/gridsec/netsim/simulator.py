"""The discrete-event cyber range: traffic, plant, attacks and layered defenses."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .. import estimator as est
from .. import ids
from ..fdi import gross_attack, random_stealthy_attack, stealthy_attack
from ..gridcore import (MeasurementSet, PerturbationPlan, apply_perturbation, build_measurement_matrix,
                        connectivity, dc_power_flow, measure)
from .._rng import subseed, substream
from ..mtd import mtd_schedule_policy, search_plan
from .bitw import BitwNetwork
from .engine import EventQueue
from .frames import Frame
from .plant import (Breaker, BreakerCommand, Plant, command_gateway, command_reverse, plc_step,
                    DEFAULT_REACTION_DELAY, DEFAULT_VALIDATION_DELAY)
from .scenario import DEFAULT_LATENCY, Scenario, SimNode

ARP_BURST = 5
ARP_SPACING = 0.05
BROADCAST = "*"


@dataclass(frozen=True)
class TraceRow:
    tick: int
    time: float
    energized: dict[str, bool]
    flows: dict[str, float]


@dataclass
class SimReport:
    scenario: str
    seed: int
    duration: float
    log: list[dict[str, Any]]
    alarms: list[ids.AlarmRecord]
    meta_alerts: list[ids.MetaAlert]
    trace: list[TraceRow]
    scada_view: list[tuple[float, str, str, float]]  # (time, display node, point, value)
    outcome: dict[str, Any]
    flow_events: list[ids.FlowEvent] = field(default_factory=list, repr=False)

    def log_jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.log)

    @property
    def log_hash(self) -> str:
        return hashlib.sha256(self.log_jsonl().encode()).hexdigest()

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        lines = list(self.trace[0].flows) if self.trace else []
        w.writerow(["tick", "load_id", "energized", *(f"flow_{lid}" for lid in lines)])
        for row in self.trace:
            flows = [repr(row.flows[lid]) for lid in lines]
            for lid, on in row.energized.items():
                w.writerow([row.tick, lid, int(on), *flows])
        return buf.getvalue()

    def alarms_jsonl(self) -> str:
        return ids.alarms_to_jsonl(self.alarms)

    @property
    def verdict(self) -> str:
        return self.outcome["verdict"]

    def levels(self) -> Counter:
        return Counter(a.level for a in self.alarms)


class Simulator:
    def __init__(self, scenario: Scenario, seed: int | None = None, profile: ids.BaselineProfile | None = None):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        doc = scenario.document
        self.duration = scenario.duration
        self.tick = float(doc.get("tick", 0.1))
        self.q = EventQueue()
        self.points = {pid: {"source": s["source"],
                             "kind": s.get("kind", "binary" if s["source"].split(":")[0] in ("breaker", "relay", "load")
                                           else "analog")}
                       for pid, s in doc.get("points", {}).items()}
        self.plant = Plant(scenario.case, [Breaker(str(b["id"]), b.get("line"), b.get("generator"),
                                                   bool(b.get("closed", True))) for b in doc.get("breakers", [])],
                           doc.get("relays", {}))
        self.base_case = scenario.case
        self.nodes = {n.id: n for n in scenario.nodes}
        self._build_topology(doc)

        d = scenario.defense
        self.defense = d
        self.gateway_on = bool(d.get("gateway", False))
        self.gateway_delay = float(d.get("gateway_delay", DEFAULT_VALIDATION_DELAY))
        self.reverse_on = bool(d.get("reverse", False))
        self.reverse_delay = float(d.get("reverse_delay", DEFAULT_REACTION_DELAY))
        self.correlation_window = float(d.get("correlation_window", ids.DEFAULT_CORRELATION_WINDOW))
        bitw = d.get("bitw", False)
        protected = ([n.id for n in scenario.nodes if n.kind in ("ied", "plc", "scada")] if bitw is True
                     else list(bitw) if bitw else [])
        self.bitw = (BitwNetwork({nid: f"{nid}-bitw" for nid in protected}, seed=self.seed,
                                 leaf_count=int(d.get("bitw_leaf_count", 4096))) if protected else None)
        self.detector = None
        if d.get("ids", False) and profile is not None:
            self.detector = ids.IntrusionDetector(profile, d.get("thresholds"))

        self.log: list[dict] = []
        self.alarms: list[ids.AlarmRecord] = []
        self.flow_events: list[ids.FlowEvent] = []
        self.trace: list[TraceRow] = []
        self.scada_view: list[tuple[float, str, str, float]] = []
        self._frame_id = 0
        self._pub_state: dict[tuple[str, int], tuple[int, int, tuple]] = {}
        self.last_published: dict[str, dict[str, float]] = {}
        self.plc_inputs = {n.id: {p: None for r in n.program for p in r.points} for n in scenario.nodes if n.program}
        self.plc_state: dict[str, dict[str, bool]] = {nid: {} for nid in self.plc_inputs}
        self.redirects: dict[tuple[str, str], str] = {}
        self.fdi_points: dict[str, float] = {}
        self.modify: dict[str, float] = {}
        self.dropping = False
        self.captured: dict[tuple[str, str], Frame] = {}
        self.executed: dict[int, BreakerCommand] = {}
        self.reversed: set[int] = set()
        self._group_start: float | None = None
        self._counts = Counter()
        self._first_attack: float | None = None
        self._first_alarm: float | None = None
        self._setup_estimator(doc)
        self._setup_mtd(d)

    # -- topology and routing ---------------------------------------------------
    def _build_topology(self, doc):
        self.default_latency = float(doc.get("default_latency", DEFAULT_LATENCY))
        self.adj: dict[str, dict[str, float]] = {}
        for ln in doc.get("links", []):
            a, b = str(ln[0]), str(ln[1])
            lat = float(ln[2]) if len(ln) == 3 else self.default_latency
            self.adj.setdefault(a, {})[b] = lat
            self.adj.setdefault(b, {})[a] = lat
        # decoys sit on their twin's segment
        for n in self.sc.nodes:
            if n.kind == "decoy" and n.id not in self.adj and n.twin in self.adj:
                for nb, lat in sorted(self.adj[n.twin].items()):
                    self.adj.setdefault(n.id, {})[nb] = lat
                    self.adj[nb][n.id] = lat

    def _shortest(self, a: str, b: str) -> list[str]:
        if a == b:
            return [a]
        prev = {a: None}
        queue = deque([a])
        while queue:
            u = queue.popleft()
            for v in sorted(self.adj.get(u, {})):
                if v not in prev:
                    prev[v] = u
                    if v == b:
                        path = [b]
                        while prev[path[-1]] is not None:
                            path.append(prev[path[-1]])
                        return path[::-1]
                    queue.append(v)
        raise ValueError(f"no network path from {a!r} to {b!r}")

    def route(self, src: str, dst: str) -> list[str]:
        attacker = self.redirects.get((src, dst))
        if attacker is None:
            return self._shortest(src, dst)
        return self._shortest(src, attacker) + self._shortest(attacker, dst)[1:]

    def latency(self, path: list[str]) -> float:
        return sum(self.adj[a][b] for a, b in zip(path, path[1:]))

    # -- logging and alarms -------------------------------------------------------
    def _log(self, record_type: str, /, **fields) -> None:
        self.log.append({"type": record_type, "t": self.q.now, **fields})

    def raise_alarm(self, level: str, score: float, detail: str, source: str | None = None,
                    tactic: str | None = None) -> ids.AlarmRecord:
        return self._record_alarm(ids.AlarmRecord(self.q.now, level, float(score), detail, tactic, source))

    def _record_alarm(self, alarm: ids.AlarmRecord) -> ids.AlarmRecord:
        self.alarms.append(alarm)
        self._log("alarm", **alarm.to_dict())
        if self._first_alarm is None:
            self._first_alarm = alarm.timestamp
        if self._group_start is None or alarm.timestamp >= self._group_start + self.correlation_window:
            self._group_start = alarm.timestamp
            self._log("meta-alert", start=alarm.timestamp, level=alarm.level)
            self._on_meta_alert(alarm.timestamp)
        return alarm

    # -- frames ---------------------------------------------------------------------
    def _new_frame(self, **kw) -> Frame:
        self._frame_id += 1
        return Frame(self._frame_id, **kw)

    def send(self, frame: Frame, origin: str | None = None) -> None:
        """Transmit ``frame`` from ``origin`` (default: its claimed source)."""
        origin = origin or frame.src
        if frame.dst == BROADCAST:
            self.q.schedule(self.q.now + self.default_latency, "deliver", lambda f=frame: self._tap(f))
            return
        if self.bitw is not None and frame.protocol != "arp" and frame.auth is None and origin == frame.src \
                and frame.src in self.bitw.wrapper_of and frame.dst in self.bitw.wrapper_of:
            frame = self.bitw.outbound(frame)
        attacker = self.redirects.get((frame.src, frame.dst)) if origin == frame.src else None
        path = self.route(frame.src, frame.dst) if attacker else self._shortest(origin, frame.dst)
        if attacker is not None and attacker in path[1:-1]:
            k = path.index(attacker)
            t_att = self.q.now + self.latency(path[: k + 1])
            rest = path[k:]
            self.q.schedule(t_att, "intercept", lambda f=frame, r=rest: self._intercept(f, r))
        else:
            self.q.schedule(self.q.now + self.latency(path), "deliver", lambda f=frame: self._deliver(f))

    def _intercept(self, frame: Frame, rest: list[str]) -> None:
        self.captured[(frame.src, frame.dst)] = frame
        if self.dropping:
            self._log("attacker-drop", frame=frame.id, src=frame.src, dst=frame.dst)
            return
        hits = [p for p in self.modify if frame.point(p) is not None]
        if hits:
            for p in hits:
                frame = frame.with_point(p, self.modify[p])
            frame = replace(frame, tampered=True)
            self._log("tamper", frame=frame.id, points=hits)
        self.q.schedule(self.q.now + self.latency(rest), "deliver", lambda f=frame: self._deliver(f))

    def _tap(self, frame: Frame) -> None:
        ev = frame.flow_event(self.q.now)
        self.flow_events.append(ev)
        self._log("frame", id=frame.id, **{k: v for k, v in ev.to_dict().items() if k != "t"})
        if self.detector is not None:
            for alarm in self.detector.observe(ev):
                self._record_alarm(alarm)
                if frame.function == "operate":
                    self._maybe_reverse(frame, alarm.timestamp)

    def _deliver(self, frame: Frame) -> None:
        node = self.nodes[frame.dst]
        if self.bitw is not None and frame.dst in self.bitw.wrapper_of and frame.protocol != "arp":
            res = self.bitw.inbound(frame)
            if not res:
                self._counts["frames_dropped"] += 1
                self._log("drop", frame=frame.id, src=frame.src, dst=frame.dst, reason=res.reason)
                self.raise_alarm("bitw", 1.0, f"{res.reason} on {frame.src}->{frame.dst}", frame.dst)
                return
            frame = res.frame
        n_alarms = len(self.alarms)
        self._tap(frame)
        handler = getattr(self, f"_on_{node.kind}", None)
        if handler is not None:
            handler(node, frame)
        if frame.tampered and node.kind != "attacker":
            self._counts["tampered_delivered"] += 1
            if len(self.alarms) == n_alarms:
                self._counts["tampered_silent"] += 1

    # -- node behaviour --------------------------------------------------------------
    def _sample(self, pids) -> tuple[tuple[str, str, float], ...]:
        out = []
        for pid in pids:
            v = self.fdi_points.get(pid)
            if v is None:
                v = self.plant.point_value(self.points[pid]["source"])
            out.append((pid, self.points[pid]["kind"], float(v)))
        return tuple(out)

    def _publish(self, node: SimNode, j: int, k: int) -> None:
        pub = node.publishes[j]
        pts = self._sample(pub.get("points", ()))
        protocol = pub.get("protocol", "goose")
        st = sq = None
        if protocol == "goose":
            binary = tuple(v for _, kind, v in pts if kind == "binary")
            prev = self._pub_state.get((node.id, j))
            if prev is None:
                st, sq = 1, 0
            elif prev[2] != binary:
                st, sq = prev[0] + 1, 0
            else:
                st, sq = prev[0], prev[1] + 1
            self._pub_state[(node.id, j)] = (st, sq, binary)
        self.last_published.setdefault(node.id, {}).update({p: v for p, _, v in pts})
        for dst in pub["to"]:
            self.send(self._new_frame(src=node.id, dst=dst, protocol=protocol,
                                      function=pub.get("function", "publish"), points=pts, st_num=st, sq_num=sq))
        period, phase = float(pub["period"]), float(pub.get("phase", 0.0))
        t_next = phase + (k + 1) * period
        if t_next <= self.duration:
            self.q.schedule(t_next, "publish", lambda: self._publish(node, j, k + 1))

    def _on_plc(self, node: SimNode, frame: Frame) -> None:
        inputs = self.plc_inputs[node.id]
        for pid, _, v in frame.points:
            if pid in inputs:
                inputs[pid] = v
        cmds, self.plc_state[node.id] = plc_step(node.program, inputs, self.plc_state[node.id])
        for cmd in cmds:
            self._log("plc-fire", node=node.id, breaker=cmd.breaker, action=cmd.action)
            self.send(self._command_frame(node.id, cmd.target, cmd))

    def _command_frame(self, src: str, dst: str, cmd: BreakerCommand) -> Frame:
        return self._new_frame(src=src, dst=dst, protocol="mms", function="operate",
                               points=((f"cmd:{cmd.breaker}", "binary", 1.0 if cmd.action == "close" else 0.0),))

    def _on_ied(self, node: SimNode, frame: Frame) -> None:
        if frame.function == "operate":
            for pid, _, v in frame.points:
                if not pid.startswith("cmd:"):
                    continue
                cmd = BreakerCommand(pid[4:], "close" if v >= 0.5 else "open", node.id, frame.src)
                if cmd.breaker not in node.breakers:
                    self._log("command-ignored", node=node.id, breaker=cmd.breaker)
                    continue
                decision = command_gateway(cmd, self.plant, self.gateway_on, self.gateway_delay)
                if not decision:
                    self._counts["commands_blocked"] += 1
                    self._log("command-block", breaker=cmd.breaker, action=cmd.action, reason=decision.reason,
                              violations=list(decision.violations))
                    self.raise_alarm("command", 1.0, f"{decision.reason}: {cmd.action} {cmd.breaker}", node.id)
                    continue
                self.q.schedule(self.q.now + decision.delay, "actuate",
                                lambda c=cmd, fid=frame.id: self._actuate(c, fid))
        elif frame.function == "read":
            pts = tuple((p, self.points[p]["kind"], v) for p, v in sorted(self.last_published.get(node.id, {}).items()))
            self.send(self._new_frame(src=node.id, dst=frame.src, protocol=frame.protocol,
                                      function="read-response", points=pts))

    def _on_scada(self, node: SimNode, frame: Frame) -> None:
        for pid, _, v in frame.points:
            self.scada_view.append((self.q.now, node.id, pid, v))
        if frame.tampered and frame.points:
            self._counts["false_scada_values"] += 1

    def _on_decoy(self, node: SimNode, frame: Frame) -> None:
        self.raise_alarm("decoy", 1.0, f"decoy {node.id} touched by {frame.src}", node.id, "Discovery")
        twin_vals = self.last_published.get(node.twin, {})
        pts = tuple((p, self.points[p]["kind"], v) for p, v in sorted(twin_vals.items()))
        self._log("decoy-reply", node=node.id, twin=node.twin, points=[list(p) for p in pts])
        self.send(self._new_frame(src=node.id, dst=frame.src, protocol=frame.protocol,
                                  function="read-response", points=pts))

    def _actuate(self, cmd: BreakerCommand, frame_id: int | None) -> None:
        changed = self.plant.set_breaker(cmd.breaker, cmd.action == "close")
        if frame_id is not None:
            self.executed[frame_id] = cmd
        self._log("actuate", breaker=cmd.breaker, action=cmd.action, issuer=cmd.issuer, changed=changed,
                  deenergized=self.plant.solve().deenergized_loads)

    def _maybe_reverse(self, frame: Frame, alarm_time: float) -> None:
        if not self.reverse_on or frame.id in self.reversed:
            return
        self.reversed.add(frame.id)

        def fire():
            cmd = self.executed.get(frame.id)
            if cmd is None:
                return
            rev = command_reverse(cmd, alarm_time, self.reverse_delay)
            self._counts["commands_reversed"] += 1
            self._log("reverse", breaker=rev.command.breaker, action=rev.command.action, of_frame=frame.id)
            self._actuate(rev.command, None)

        self.q.schedule(max(self.q.now, alarm_time + self.reverse_delay), "reverse", fire)

    # -- plant and estimator -----------------------------------------------------------
    def _plant_event(self, ev: dict) -> None:
        changed = self.plant.set_breaker(ev["breaker"], ev["action"] == "close")
        self._log("plant", breaker=ev["breaker"], action=ev["action"], changed=changed,
                  deenergized=self.plant.solve().deenergized_loads)

    def _sample_trace(self, k: int) -> None:
        snap = self.plant.solve()
        self.trace.append(TraceRow(k, self.q.now, dict(snap.energized_loads), dict(snap.flows)))
        t_next = (k + 1) * self.tick
        if t_next <= self.duration + 1e-12:
            self.q.schedule(t_next, "tick", lambda: self._sample_trace(k + 1))

    def _setup_estimator(self, doc) -> None:
        cfg = doc.get("estimator")
        self.est_cfg = cfg
        self.fdi_vector = None
        if cfg is None:
            return
        sigma = float(cfg.get("sigma", 0.01))
        self.ms = (MeasurementSet.from_dict(cfg["measurements"], sigma) if "measurements" in cfg
                   else MeasurementSet.all_flows_and_injections(self.base_case, sigma))
        self.est_noise = float(cfg.get("noise", 0.0))
        self.est_p = float(cfg.get("p", est.DEFAULT_CONFIDENCE))
        self.est_rng = np.random.default_rng(substream(self.seed, "estimator-noise"))

    def _estimate(self, k: int | None) -> None:
        tc = self.plant.topology_case()
        snap = self.plant.solve()
        if len(connectivity(tc)) == 1 and snap.energized_buses:
            inj = {b: 0.0 for b in tc.buses}
            for ld in tc.loads:
                inj[ld.bus] -= ld.p
            for g in tc.generators:
                inj[g.bus] += snap.generation[g.id]
            sol = dc_power_flow(tc, inj)
            z = measure(tc, self.ms, sol)
            sig = self.ms.sigmas
            if self.est_noise > 0:
                z = z + self.est_noise * sig * self.est_rng.standard_normal(len(z))
            if self.fdi_vector is not None:
                z = z + self.fdi_vector
            H = build_measurement_matrix(tc, self.ms)
            v = est.bdd(H, z, sig, self.est_p)
            self._log("estimate", J=v.J, tau=v.threshold, flagged=v.flagged, recheck=k is None)
            if v.flagged:
                self.raise_alarm("bdd", v.J / v.threshold, f"J={v.J:.6g} exceeds {v.threshold:.6g}", "estimator",
                                 "Manipulation of View")
        if k is not None:
            t_next = (k + 1) * float(self.est_cfg.get("period", 0.5))
            if t_next <= self.duration:
                self.q.schedule(t_next, "estimate", lambda: self._estimate(k + 1))

    def _setup_mtd(self, d) -> None:
        cfg = d.get("mtd")
        self.mtd_policy = None
        self._mtd_count = 0
        if cfg is None:
            return
        raw_plans = cfg.get("plans", "search")
        if raw_plans == "search":
            ms = getattr(self, "ms", None) or MeasurementSet.all_flows_and_injections(self.base_case)
            plans = [search_plan(self.base_case, ms, "maximize-spa", tuple(cfg.get("bounds", (0.8, 1.2))),
                                 iterations=int(cfg.get("iterations", 40)), seed=subseed(self.seed, "mtd-search"))]
        else:
            plans = [PerturbationPlan.from_dict(p) for p in raw_plans]
        mode = "event_triggered" if cfg["mode"] in ("event", "event_triggered") else "periodic"
        self.mtd_policy = mtd_schedule_policy(mode, cfg.get("interval"), plans, float(cfg.get("delay", 0.0)))

    def _on_meta_alert(self, t: float) -> None:
        if self.mtd_policy is None:
            return
        when = self.mtd_policy.on_meta_alert(t)
        if when is not None and when <= self.duration:
            self.q.schedule(when, "perturb", self._perturb)

    def _perturb(self) -> None:
        plan = self.mtd_policy.plan_for(self._mtd_count)
        self._mtd_count += 1
        if plan is None:
            return
        self.plant.set_case(apply_perturbation(self.base_case, plan))
        self._log("perturb", label=plan.label, entries=[[lid, f] for lid, f in plan.entries])
        if self.est_cfg is not None:
            self._estimate(None)

    # -- attacks ------------------------------------------------------------------------
    def _attacker_id(self, atk: dict) -> str:
        if "attacker" in atk:
            return atk["attacker"]
        return next(n.id for n in self.sc.nodes if n.kind == "attacker")

    def _attack(self, atk: dict) -> None:
        action = atk["action"]
        if self._first_attack is None:
            self._first_attack = self.q.now
        self._log("attack", action=action, **{k: v for k, v in atk.items() if k not in ("t", "action")})
        if action == "fdi_point":
            if atk.get("value") is None:
                self.fdi_points.pop(atk["point"], None)
            else:
                self.fdi_points[atk["point"]] = float(atk["value"])
        elif action == "modify":
            if atk.get("value") is None:
                self.modify.pop(atk["point"], None)
            else:
                self.modify[atk["point"]] = float(atk["value"])
        elif action == "drop":
            self.dropping = bool(atk.get("active", True))
        elif action == "redirect_path":
            self.redirect_path(self._attacker_id(atk), *atk["pair"])
        elif action == "touch_decoy":
            self.decoy_touch(self._attacker_id(atk), atk["target"])
        elif action == "inject":
            me = self._attacker_id(atk)
            pts = tuple((p, self.points[p]["kind"] if p in self.points else "binary", float(v))
                        for p, v in atk.get("points", {}).items())
            if "command" in atk:
                c = atk["command"]
                pts += ((f"cmd:{c['breaker']}", "binary", 1.0 if c["action"] == "close" else 0.0),)
            f = self._new_frame(src=atk.get("src", me), dst=atk["dst"], protocol=atk.get("protocol", "mms"),
                                function=atk.get("function", "operate"), points=pts,
                                st_num=atk.get("st_num"), sq_num=atk.get("sq_num"), tampered=True)
            self.send(f, origin=me)
        elif action == "replay":
            me = self._attacker_id(atk)
            key = tuple(atk["pair"]) if "pair" in atk else (max(self.captured, default=None))
            old = self.captured.get(key) if key else None
            if old is not None:
                self.send(replace(old, id=self._next_id(), tampered=True), origin=me)
        elif action == "fdi_vector":
            self.fdi_vector = self._fdi_vector(atk)

    def _close_ids_window(self, t: float) -> None:
        for alarm in self.detector.finish(t):
            self._record_alarm(alarm)

    def _next_id(self) -> int:
        self._frame_id += 1
        return self._frame_id

    def _fdi_vector(self, atk: dict):
        if atk.get("kind") is None:
            return None
        H = build_measurement_matrix(self.plant.topology_case(), self.ms)  # attacker's learned model
        kind = atk["kind"]
        if kind == "stealthy":
            if "c" in atk:
                return stealthy_attack(H, atk["c"]).a
            return random_stealthy_attack(H, float(atk["magnitude"]), subseed(self.seed, "fdi", int(atk.get("seed", 0)))).a
        if kind == "gross":
            sig = self.ms.sigmas
            idx = [int(i) for i in atk["indices"]]
            offs = [float(atk.get("sigmas", 10.0)) * sig[i] for i in idx] if "offsets" not in atk else atk["offsets"]
            return gross_attack(len(self.ms), idx, offs).a
        raise ValueError(f"unknown fdi_vector kind {kind!r}")

    def redirect_path(self, attacker: str, a: str, b: str) -> None:
        """Route traffic between ``a`` and ``b`` through ``attacker`` and emit the address-poisoning frames."""
        self.redirects[(a, b)] = attacker
        self.redirects[(b, a)] = attacker
        hw = self.nodes[attacker].hardware
        self._log("redirect", attacker=attacker, pair=[a, b], path=self.route(a, b))
        for i in range(ARP_BURST):
            for victim, spoofed in ((a, b), (b, a)):
                f = self._new_frame(src=attacker, dst=victim, protocol="arp", function="reply",
                                    logical_address=self.nodes[spoofed].logical, hardware_address=hw)
                self.q.schedule(self.q.now + i * ARP_SPACING, "arp", lambda f=f: self.send(f, origin=attacker))

    def decoy_touch(self, attacker: str, decoy: str) -> None:
        self.send(self._new_frame(src=attacker, dst=decoy, protocol="mms", function="read", tampered=True),
                  origin=attacker)

    # -- main loop ------------------------------------------------------------------------
    def _announce_addresses(self) -> None:
        for n in self.sc.nodes:
            if n.kind in ("attacker",):
                continue
            self.send(self._new_frame(src=n.id, dst=BROADCAST, protocol="arp", function="announce",
                                      logical_address=n.logical, hardware_address=n.hardware))

    def run(self) -> SimReport:
        doc = self.sc.document
        self._log("start", scenario=self.sc.name, seed=self.seed, duration=self.duration)
        if self.bitw is not None:
            self._log("bitw", wrappers=sorted(self.bitw.wrapper_of.values()))
        self._announce_addresses()
        for ev in doc.get("plant_events", []):
            self.q.schedule(float(ev["t"]), "plant", lambda ev=ev: self._plant_event(ev))
        for atk in doc.get("attacks", []):
            self.q.schedule(float(atk["t"]), "attack", lambda atk=atk: self._attack(atk))
        self.q.schedule(0.0, "tick", lambda: self._sample_trace(0))
        for n in self.sc.nodes:
            for j, pub in enumerate(n.publishes):
                phase = float(pub.get("phase", 0.0))
                if phase <= self.duration:
                    self.q.schedule(phase, "publish", lambda n=n, j=j: self._publish(n, j, 0))
        if self.est_cfg is not None:
            self.q.schedule(0.0, "estimate", lambda: self._estimate(0))
        if self.mtd_policy is not None:
            for t in self.mtd_policy.event_times(self.duration):
                self.q.schedule(t, "perturb", self._perturb)
        if self.detector is not None:
            # windows close on their own boundary, so window alarms are logged in time order
            w, origin = self.detector.profile.window_seconds, self.detector.profile.origin
            k = 1
            while origin + k * w <= self.duration:
                self.q.schedule(origin + k * w, "ids-window", lambda t=origin + k * w: self._close_ids_window(t))
                k += 1

        last_t = 0.0
        while len(self.q) and self.q.peek_time() <= self.duration:
            ev = self.q.pop()
            if ev.time < last_t or ev.time < ev.scheduled_at:
                raise RuntimeError("causality violated")
            last_t = ev.time
            ev.action()
        self.q.now = self.duration
        if self.detector is not None:
            for alarm in self.detector.finish(self.duration):
                self._record_alarm(alarm)
        return self._report()

    def _report(self) -> SimReport:
        snap = self.plant.solve()
        dead = snap.deenergized_loads
        levels = Counter(a.level for a in self.alarms)
        latency = (self._first_alarm - self._first_attack
                   if self._first_alarm is not None and self._first_attack is not None
                   and self._first_alarm >= self._first_attack else None)
        parts = []
        if not dead:
            parts.append("all loads energized")
        elif len(dead) == len(snap.energized_loads):
            parts.append("total outage")
        else:
            parts.append("partial outage: loads " + ",".join(dead))
        if levels.get("address"):
            parts.append("address alarm raised")
        if self._counts["frames_dropped"]:
            parts.append(f"{self._counts['frames_dropped']} frames dropped by BITW")
        if self._counts["false_scada_values"]:
            parts.append("false SCADA value displayed")
        if self._counts["commands_blocked"]:
            parts.append(f"{self._counts['commands_blocked']} commands blocked")
        if self._counts["commands_reversed"]:
            parts.append(f"{self._counts['commands_reversed']} commands reversed")
        if levels.get("bdd"):
            parts.append("bad data detected")
        outcome = {
            "deenergized_loads": dead,
            "breakers": {b: ("closed" if c else "open") for b, c in sorted(self.plant.closed.items())},
            "alarms": len(self.alarms),
            "alarms_by_level": dict(sorted(levels.items())),
            "frames_dropped": self._counts["frames_dropped"],
            "tampered_delivered": self._counts["tampered_delivered"],
            "tampered_silent": self._counts["tampered_silent"],
            "false_scada_values": self._counts["false_scada_values"],
            "commands_blocked": self._counts["commands_blocked"],
            "commands_reversed": self._counts["commands_reversed"],
            "perturbations": self._mtd_count,
            "detection_latency": latency,
            "verdict": "; ".join(parts),
        }
        self._log("end", **{k: v for k, v in outcome.items() if k != "verdict"}, verdict=outcome["verdict"])
        return SimReport(self.sc.name, self.seed, self.duration, self.log, list(self.alarms),
                         ids.correlate(self.alarms, self.correlation_window), self.trace, self.scada_view,
                         outcome, self.flow_events)


def learn_scenario_baseline(scenario: Scenario, seed: int | None = None) -> ids.BaselineProfile:
    """IDS profile from a benign run of ``scenario`` (attack script removed, IDS off)."""
    benign = scenario.strip_attacks().with_defense(ids=False)
    rep = Simulator(benign, seed).run()
    window = float(scenario.defense.get("ids_window", ids.DEFAULT_WINDOW))
    return ids.learn_baseline(rep.flow_events, window, start=0.0, end=scenario.duration)


def run(scenario: Scenario, seed: int | None = None, profile: ids.BaselineProfile | None = None) -> SimReport:
    """Run a scenario to its duration; with IDS enabled and no profile, one is learned first."""
    if scenario.defense.get("ids", False) and profile is None:
        profile = learn_scenario_baseline(scenario, seed)
    return Simulator(scenario, seed, profile).run()


def fdi_measurement_stream(scenario: Scenario, seed: int | None = None) -> list[dict]:
    """Estimator records (J, threshold, flag) of a scenario run with an estimator section."""
    return [r for r in run(scenario, seed).log if r["type"] == "estimate"]
