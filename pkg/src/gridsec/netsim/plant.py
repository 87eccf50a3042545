"""Physical plant behind the simulated substation: breakers, relays, per-island DC flow,
PLC rules, command validation and command reversal."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from ..gridcore import GridCase, Line, connectivity, dc_power_flow

OPEN, CLOSED = 0, 1
BAD, GOOD = 0, 1
SYMBOLS = {"open": 0, "closed": 1, "close": 1, "bad": 0, "good": 1, "false": 0, "true": 1}
LIMIT_TOL = 1e-9


def symbol_value(v) -> float:
    if isinstance(v, str):
        try:
            return float(SYMBOLS[v.lower()])
        except KeyError:
            raise ValueError(f"unknown symbolic value {v!r}") from None
    return float(v)


@dataclass(frozen=True)
class Breaker:
    id: str
    line: str | None = None
    generator: str | None = None
    closed: bool = True


@dataclass(frozen=True)
class PlantSnapshot:
    energized_buses: frozenset[int]
    energized_loads: dict[str, bool]
    flows: dict[str, float]
    islands: tuple[tuple[int, ...], ...]
    generation: dict[str, float]
    shortfall: float  # load in energized islands beyond generator capacity

    @property
    def deenergized_loads(self) -> list[str]:
        return [lid for lid, on in self.energized_loads.items() if not on]


class Plant:
    """Mutable plant state; ``case`` carries reactances (including MTD perturbations)."""

    def __init__(self, case: GridCase, breakers: Sequence[Breaker] = (), relays: Mapping[str, float] | None = None):
        self.case = case
        self.breakers = {b.id: b for b in breakers}
        for b in breakers:
            if (b.line is None) == (b.generator is None):
                raise ValueError(f"breaker {b.id!r} must switch exactly one line or generator")
            if b.line is not None:
                case.line(b.line)
            elif b.generator not in {g.id for g in case.generators}:
                raise KeyError(f"breaker {b.id!r} references unknown generator {b.generator!r}")
        self.closed = {b.id: bool(b.closed) for b in breakers}
        self.relays = {k: symbol_value(v) for k, v in (relays or {}).items()}
        self._cache: PlantSnapshot | None = None

    def copy(self) -> "Plant":
        other = copy.copy(self)
        other.closed = dict(self.closed)
        other.relays = dict(self.relays)
        other._cache = None
        return other

    def set_breaker(self, breaker: str, closed: bool) -> bool:
        """Returns whether the state changed."""
        if breaker not in self.closed:
            raise KeyError(f"unknown breaker {breaker!r}")
        changed = self.closed[breaker] != bool(closed)
        self.closed[breaker] = bool(closed)
        if changed:
            self._cache = None
        return changed

    def set_case(self, case: GridCase) -> None:
        self.case = case
        self._cache = None

    def _line_in_service(self, ln: Line) -> bool:
        for b in self.breakers.values():
            if b.line == ln.id:
                return self.closed[b.id]
        return ln.in_service

    def _gen_online(self, gen_id: str) -> bool:
        for b in self.breakers.values():
            if b.generator == gen_id:
                return self.closed[b.id]
        return True

    def topology_case(self) -> GridCase:
        case = self.case
        for ln in case.lines:
            status = self._line_in_service(ln)
            if status != ln.in_service:
                case = case.with_line_status(ln.id, status)
        return case

    def solve(self) -> PlantSnapshot:
        """DC flow on each island fed by an online generator; other islands are dead."""
        if self._cache is not None:
            return self._cache
        tc = self.topology_case()
        islands = connectivity(tc)
        gens = [g for g in tc.generators if self._gen_online(g.id)]
        flows = {ln.id: 0.0 for ln in tc.lines}
        generation = {g.id: 0.0 for g in tc.generators}
        energized: set[int] = set()
        shortfall = 0.0
        for comp in islands:
            members = set(comp)
            gs = [g for g in gens if g.bus in members]
            if not gs:
                continue
            energized |= members
            demand = sum(ld.p for ld in tc.loads if ld.bus in members)
            cap = sum(g.p_max for g in gs)
            shortfall += max(0.0, demand - cap)
            inj = {b: 0.0 for b in comp}
            for ld in tc.loads:
                if ld.bus in members:
                    inj[ld.bus] -= ld.p
            for g in gs:
                pg = demand * g.p_max / cap if cap > 0 else demand / len(gs)
                generation[g.id] = pg
                inj[g.bus] += pg
            lines = tuple(ln for ln in tc.in_service_lines if ln.from_bus in members)
            if len(comp) > 1:
                sub = GridCase(buses=tuple(comp), slack_bus=gs[0].bus, lines=lines)
                sol = dc_power_flow(sub, inj)
                for ln in lines:
                    flows[ln.id] = sol.flow(ln.id)
        loads = {ld.id: ld.bus in energized for ld in tc.loads}
        self._cache = PlantSnapshot(frozenset(energized), loads, flows, tuple(tuple(c) for c in islands),
                                    generation, shortfall)
        return self._cache

    def point_value(self, source: str) -> float:
        kind, _, ref = source.partition(":")
        if kind == "breaker":
            return float(CLOSED if self.closed[ref] else OPEN)
        if kind == "relay":
            return float(self.relays[ref])
        snap = self.solve()
        if kind == "flow":
            return float(snap.flows[ref])
        if kind == "load":
            return float(snap.energized_loads[ref])
        if kind == "gen":
            return float(snap.generation[ref])
        raise KeyError(f"unknown point source {source!r}")

    def line_limits(self) -> dict[str, float]:
        return {ln.id: ln.limit for ln in self.case.lines}


# -- PLC ------------------------------------------------------------------------

class PlcError(KeyError):
    pass


_OPS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class BreakerCommand:
    breaker: str
    action: str  # "open" | "close"
    target: str = ""  # node that actuates the breaker
    issuer: str = ""

    def __post_init__(self):
        if self.action not in ("open", "close"):
            raise ValueError(f"breaker action must be 'open' or 'close', got {self.action!r}")

    def inverse(self, issuer: str = "") -> "BreakerCommand":
        return BreakerCommand(self.breaker, "close" if self.action == "open" else "open", self.target, issuer)


@dataclass(frozen=True)
class PlcRule:
    name: str
    conditions: tuple[tuple[str, str, float], ...]
    command: BreakerCommand

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], index: int = 0) -> "PlcRule":
        conds = []
        for c in d["when"]:
            point, op, value = c
            if op not in _OPS:
                raise ValueError(f"unknown comparison {op!r}")
            conds.append((str(point), op, symbol_value(value)))
        then = d["then"]
        return cls(str(d.get("name", f"rule{index}")), tuple(conds),
                   BreakerCommand(str(then["breaker"]), str(then["action"]), str(then.get("target", ""))))

    @property
    def points(self) -> set[str]:
        return {p for p, _, _ in self.conditions}


def plc_step(program: Sequence[PlcRule], inputs: Mapping[str, float | None],
             previous: Mapping[str, bool] | None = None) -> tuple[list[BreakerCommand], dict[str, bool]]:
    """Evaluate ladder-style rules once.

    A rule's command is emitted when all its conditions hold now and did not
    hold at the previous step (rising edge). Inputs that have not been received
    yet are ``None`` and make their conditions false.
    """
    previous = previous or {}
    commands, state = [], {}
    for rule in program:
        ok = True
        for point, op, value in rule.conditions:
            if point not in inputs:
                raise PlcError(f"rule {rule.name!r} references undefined point {point!r}")
            v = inputs[point]
            if v is None or not _OPS[op](float(v), value):
                ok = False
                break
        state[rule.name] = ok
        if ok and not previous.get(rule.name, False):
            commands.append(rule.command)
    return commands, state


# -- command validation and reversal ---------------------------------------------------

@dataclass(frozen=True)
class GatewayDecision:
    allowed: bool
    reason: str = ""
    delay: float = 0.0
    violations: tuple[str, ...] = ()

    def __bool__(self):
        return self.allowed


DEFAULT_VALIDATION_DELAY = 0.1


def command_gateway(command: BreakerCommand, plant: Plant, validation: bool = True,
                    delay: float = DEFAULT_VALIDATION_DELAY) -> GatewayDecision:
    """What-if check of a breaker command against the live plant.

    Blocks commands that de-energize a currently energized load ("islanding")
    or push a line above its limit ("limit violation").
    """
    if command.breaker not in plant.closed:
        raise KeyError(f"command targets unknown breaker {command.breaker!r}")
    if not validation:
        return GatewayDecision(True)
    before = plant.solve()
    trial = plant.copy()
    trial.set_breaker(command.breaker, command.action == "close")
    after = trial.solve()
    lost = [lid for lid, on in before.energized_loads.items() if on and not after.energized_loads[lid]]
    if lost:
        return GatewayDecision(False, "islanding", delay, tuple(f"load {lid}" for lid in lost))
    limits = plant.line_limits()
    over = [lid for lid, f in after.flows.items()
            if abs(f) > limits[lid] + LIMIT_TOL and abs(before.flows[lid]) <= limits[lid] + LIMIT_TOL]
    if over:
        return GatewayDecision(False, "limit violation", delay, tuple(f"line {lid}" for lid in over))
    return GatewayDecision(True, "", delay)


@dataclass(frozen=True)
class ReversalAction:
    time: float
    command: BreakerCommand


DEFAULT_REACTION_DELAY = 0.5


def command_reverse(command: BreakerCommand, alarm_time: float | None, delay: float = DEFAULT_REACTION_DELAY,
                    enabled: bool = True) -> ReversalAction | None:
    """Inverse actuation ``delay`` seconds after the alarm that flagged ``command``."""
    if not enabled or alarm_time is None or math.isnan(alarm_time):
        return None
    return ReversalAction(alarm_time + delay, command.inverse("reversal"))
