"""Grid model, DC power flow, measurement matrices and DC optimal dispatch.

Everything here works in per-unit on an implicit MVA base. The state vector
``x`` used by the estimator is the vector of non-slack bus angles in
ascending bus-id order; the slack angle is pinned to zero.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

BALANCE_TOL = 1e-9
PIVOT_TOL = 1e-12


class CaseError(ValueError):
    """Schema or invariant violation in a grid-case document."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class IslandingError(ValueError):
    def __init__(self, components: list[list[int]]):
        super().__init__(f"network is islanded into {len(components)} components: {components}")
        self.components = components


class UnobservableError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    """Raised by :func:`dc_opf`; ``binding`` names the constraints that had to be relaxed."""

    def __init__(self, binding: list[str]):
        super().__init__("dispatch problem is infeasible; violated constraints: " + ", ".join(binding))
        self.binding = binding


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: int
    to_bus: int
    x: float
    limit: float = math.inf
    dfacts: bool = False
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    id: str
    bus: int
    cost: float
    p_min: float
    p_max: float


@dataclass(frozen=True)
class Load:
    id: str
    bus: int
    p: float


@dataclass(frozen=True)
class GridCase:
    buses: tuple[int, ...]
    slack_bus: int
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...] = ()
    loads: tuple[Load, ...] = ()
    voltage_levels: Mapping[int, float] = field(default_factory=dict, compare=False)
    name: str = ""

    def __post_init__(self):
        _validate(self)

    # -- lookups -----------------------------------------------------------
    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def state_buses(self) -> tuple[int, ...]:
        return tuple(b for b in self.buses if b != self.slack_bus)

    @property
    def n_states(self) -> int:
        return len(self.buses) - 1

    def bus_index(self, bus: int) -> int:
        return self.buses.index(bus)

    def line(self, line_id: str) -> Line:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise KeyError(f"unknown line {line_id!r}")

    def line_index(self, line_id: str) -> int:
        for i, ln in enumerate(self.lines):
            if ln.id == line_id:
                return i
        raise KeyError(f"unknown line {line_id!r}")

    @property
    def in_service_lines(self) -> tuple[Line, ...]:
        return tuple(ln for ln in self.lines if ln.in_service)

    def with_line_status(self, line_id: str, in_service: bool) -> "GridCase":
        idx = self.line_index(line_id)
        lines = list(self.lines)
        lines[idx] = dataclasses.replace(lines[idx], in_service=in_service)
        return dataclasses.replace(self, lines=tuple(lines))

    def demand(self) -> np.ndarray:
        """Per-bus load in bus order."""
        d = np.zeros(self.n_buses)
        for ld in self.loads:
            d[self.bus_index(ld.bus)] += ld.p
        return d


def _validate(case: GridCase) -> None:
    if len(case.buses) == 0:
        raise CaseError("buses", "at least one bus is required")
    if len(set(case.buses)) != len(case.buses):
        raise CaseError("buses", "duplicate bus ids")
    if list(case.buses) != sorted(case.buses):
        raise CaseError("buses", "bus ids must be in ascending order")
    known = set(case.buses)
    if case.slack_bus not in known:
        raise CaseError("slack_bus", f"slack bus {case.slack_bus} is not a bus")
    seen_ids = set()
    for i, ln in enumerate(case.lines):
        path = f"lines[{i}]"
        if ln.id in seen_ids:
            raise CaseError(f"{path}.id", f"duplicate line id {ln.id!r}")
        seen_ids.add(ln.id)
        if ln.from_bus not in known:
            raise CaseError(f"{path}.from", f"unknown bus {ln.from_bus}")
        if ln.to_bus not in known:
            raise CaseError(f"{path}.to", f"unknown bus {ln.to_bus}")
        if ln.from_bus == ln.to_bus:
            raise CaseError(path, "line must join two distinct buses")
        if not ln.x > 0:
            raise CaseError(f"{path}.x", f"nonpositive reactance {ln.x}")
        if not ln.limit > 0:
            raise CaseError(f"{path}.limit", "flow limit must be positive")
    for i, g in enumerate(case.generators):
        if g.bus not in known:
            raise CaseError(f"generators[{i}].bus", f"unknown bus {g.bus}")
        if g.p_min > g.p_max:
            raise CaseError(f"generators[{i}]", "p_min exceeds p_max")
    for i, ld in enumerate(case.loads):
        if ld.bus not in known:
            raise CaseError(f"loads[{i}].bus", f"unknown bus {ld.bus}")
    full = _components(case.buses, [(ln.from_bus, ln.to_bus) for ln in case.lines])
    if len(full) > 1:
        raise CaseError("lines", f"topology is disconnected even with every line in service: {full}")


# -- document I/O -------------------------------------------------------------

def _require(obj: Mapping, key: str, path: str):
    if not isinstance(obj, Mapping):
        raise CaseError(path, "expected an object")
    if key not in obj:
        raise CaseError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(path, f"expected a number, got {value!r}")
    return float(value)


def load_case(document: str | bytes | Path | Mapping[str, Any]) -> GridCase:
    """Parse and validate a grid-case document.

    ``document`` may be JSON text, a path to a JSON file, or an already
    decoded mapping.
    """
    if isinstance(document, Path):
        data = json.loads(document.read_text())
    elif isinstance(document, (str, bytes)):
        try:
            data = json.loads(document)
        except json.JSONDecodeError as exc:
            raise CaseError("<document>", f"invalid JSON: {exc}") from None
    else:
        data = document
    if not isinstance(data, Mapping):
        raise CaseError("<document>", "top level must be an object")

    raw_buses = _require(data, "buses", "")
    if not isinstance(raw_buses, list):
        raise CaseError("buses", "expected a list")
    buses, kv = [], {}
    for i, b in enumerate(raw_buses):
        if isinstance(b, Mapping):
            bid = _require(b, "id", f"buses[{i}]")
            if "kv" in b:
                kv[int(bid)] = _number(b["kv"], f"buses[{i}].kv")
        else:
            bid = b
        if isinstance(bid, bool) or not isinstance(bid, int):
            raise CaseError(f"buses[{i}]", "bus id must be an integer")
        buses.append(bid)
    slack = _require(data, "slack_bus", "")

    lines = []
    for i, ln in enumerate(_require(data, "lines", "")):
        p = f"lines[{i}]"
        status = ln.get("status", "in") if isinstance(ln, Mapping) else "in"
        if status not in ("in", "out"):
            raise CaseError(f"{p}.status", "status must be 'in' or 'out'")
        limit = ln.get("limit") if isinstance(ln, Mapping) else None
        lines.append(Line(
            id=str(_require(ln, "id", p)),
            from_bus=_require(ln, "from", p),
            to_bus=_require(ln, "to", p),
            x=_number(_require(ln, "x", p), f"{p}.x"),
            limit=math.inf if limit is None else _number(limit, f"{p}.limit"),
            dfacts=bool(ln.get("dfacts", False)),
            in_service=status == "in",
        ))
    gens = []
    for i, g in enumerate(data.get("generators", [])):
        p = f"generators[{i}]"
        gens.append(Generator(
            id=str(g.get("id", f"G{i}")),
            bus=_require(g, "bus", p),
            cost=_number(_require(g, "cost", p), f"{p}.cost"),
            p_min=_number(g.get("p_min", 0.0), f"{p}.p_min"),
            p_max=_number(_require(g, "p_max", p), f"{p}.p_max"),
        ))
    loads = []
    for i, ld in enumerate(data.get("loads", [])):
        p = f"loads[{i}]"
        loads.append(Load(id=str(ld.get("id", i)), bus=_require(ld, "bus", p),
                          p=_number(_require(ld, "p", p), f"{p}.p")))
    return GridCase(buses=tuple(sorted(buses)), slack_bus=slack, lines=tuple(lines),
                    generators=tuple(gens), loads=tuple(loads), voltage_levels=kv,
                    name=str(data.get("name", "")))


def case_to_dict(case: GridCase) -> dict[str, Any]:
    buses = [{"id": b, "kv": case.voltage_levels[b]} if b in case.voltage_levels else b
             for b in case.buses]
    lines = []
    for ln in case.lines:
        d = {"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "x": ln.x,
             "limit": None if math.isinf(ln.limit) else ln.limit, "dfacts": ln.dfacts}
        if not ln.in_service:
            d["status"] = "out"
        lines.append(d)
    return {
        "name": case.name,
        "buses": buses,
        "slack_bus": case.slack_bus,
        "lines": lines,
        "generators": [{"id": g.id, "bus": g.bus, "cost": g.cost, "p_min": g.p_min, "p_max": g.p_max}
                       for g in case.generators],
        "loads": [{"id": ld.id, "bus": ld.bus, "p": ld.p} for ld in case.loads],
    }


def case_digest(case: GridCase) -> str:
    """Content hash of a case (used to check that operations do not mutate inputs)."""
    blob = json.dumps(case_to_dict(case), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def bundled_case(name: str) -> GridCase:
    """Load one of the sample cases shipped in ``gridsec/data/cases``."""
    path = Path(__file__).parent / "data" / "cases" / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return load_case(path)


# -- topology -----------------------------------------------------------------

def _components(buses: Iterable[int], edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    adj: dict[int, list[int]] = {b: [] for b in buses}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen: set[int] = set()
    comps = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp, queue = [], deque([start])
        seen.add(start)
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def connectivity(case: GridCase) -> list[list[int]]:
    """Connected components of the in-service network, each a sorted bus list."""
    return _components(case.buses, [(ln.from_bus, ln.to_bus) for ln in case.in_service_lines])


# -- DC power flow ------------------------------------------------------------

@dataclass(frozen=True)
class FlowSolution:
    buses: tuple[int, ...]
    line_ids: tuple[str, ...]
    angles: np.ndarray
    flows: np.ndarray

    def angle(self, bus: int) -> float:
        return float(self.angles[self.buses.index(bus)])

    def flow(self, line_id: str, direction: int = 1) -> float:
        return direction * float(self.flows[self.line_ids.index(line_id)])


def susceptance_matrix(case: GridCase) -> np.ndarray:
    """Full nodal matrix B with P = B @ theta for in-service lines."""
    n = case.n_buses
    B = np.zeros((n, n))
    for ln in case.in_service_lines:
        i, j = case.bus_index(ln.from_bus), case.bus_index(ln.to_bus)
        b = 1.0 / ln.x
        B[i, i] += b
        B[j, j] += b
        B[i, j] -= b
        B[j, i] -= b
    return B


def injection_vector(case: GridCase, values: Mapping[int, float] | Sequence[float]) -> np.ndarray:
    """Build a bus-ordered injection vector from a ``{bus: p}`` mapping or a sequence."""
    if isinstance(values, Mapping):
        p = np.zeros(case.n_buses)
        for bus, val in values.items():
            p[case.bus_index(bus)] = val
        return p
    p = np.asarray(values, dtype=float)
    if p.shape != (case.n_buses,):
        raise ValueError(f"injection vector must have length {case.n_buses}")
    return p


def dispatch_injections(case: GridCase, dispatch: Sequence[float]) -> np.ndarray:
    """Net injections (generation minus load) for a per-generator dispatch."""
    p = -case.demand()
    for g, pg in zip(case.generators, dispatch):
        p[case.bus_index(g.bus)] += pg
    return p


def _reduced_lu(case: GridCase):
    comps = connectivity(case)
    if len(comps) > 1:
        raise IslandingError(comps)
    keep = [case.bus_index(b) for b in case.state_buses]
    Bred = susceptance_matrix(case)[np.ix_(keep, keep)]
    if Bred.size == 0:
        return None, keep
    lu, piv = scipy.linalg.lu_factor(Bred, check_finite=False)
    if np.min(np.abs(np.diag(lu))) < PIVOT_TOL:
        raise IslandingError(comps)
    return (lu, piv), keep


def flows_from_angles(case: GridCase, angles: np.ndarray) -> np.ndarray:
    f = np.zeros(len(case.lines))
    for k, ln in enumerate(case.lines):
        if ln.in_service:
            f[k] = (angles[case.bus_index(ln.from_bus)] - angles[case.bus_index(ln.to_bus)]) / ln.x
    return f


def dc_power_flow(case: GridCase, inj: Mapping[int, float] | Sequence[float]) -> FlowSolution:
    """Solve the lossless DC power flow for a balanced injection vector."""
    p = injection_vector(case, inj)
    if abs(p.sum()) > BALANCE_TOL:
        raise ValueError(f"injections are unbalanced (sum = {p.sum():.3e})")
    factor, keep = _reduced_lu(case)
    theta = np.zeros(case.n_buses)
    if factor is not None:
        theta[keep] = scipy.linalg.lu_solve(factor, p[keep], check_finite=False)
    return FlowSolution(case.buses, tuple(ln.id for ln in case.lines), theta,
                        flows_from_angles(case, theta))


def angles_from_state(case: GridCase, x: Sequence[float]) -> np.ndarray:
    """Expand a state vector (non-slack angles) into a full bus-angle vector."""
    theta = np.zeros(case.n_buses)
    theta[[case.bus_index(b) for b in case.state_buses]] = x
    return theta


# -- measurements -------------------------------------------------------------

@dataclass(frozen=True)
class Measurement:
    kind: str  # "flow" | "injection"
    target: str | int  # line id for flows, bus id for injections
    sigma: float
    direction: int = 1  # flows only: +1 measures from->to, -1 to->from

    def __post_init__(self):
        if self.kind not in ("flow", "injection"):
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("measurement sigma must be positive")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")


@dataclass(frozen=True)
class MeasurementSet:
    measurements: tuple[Measurement, ...]

    def __len__(self):
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([m.sigma for m in self.measurements])

    @classmethod
    def all_flows_and_injections(cls, case: GridCase, sigma: float = 0.01) -> "MeasurementSet":
        ms = [Measurement("flow", ln.id, sigma) for ln in case.in_service_lines]
        ms += [Measurement("injection", b, sigma) for b in case.buses]
        return cls(tuple(ms))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | Sequence[Mapping[str, Any]],
                  default_sigma: float = 0.01) -> "MeasurementSet":
        items = data["measurements"] if isinstance(data, Mapping) else data
        out = []
        for d in items:
            kind = d.get("type", d.get("kind"))
            sigma = float(d.get("sigma", default_sigma))
            if kind == "flow":
                out.append(Measurement("flow", str(d["line"]), sigma, int(d.get("direction", 1))))
            elif kind == "injection":
                out.append(Measurement("injection", int(d["bus"]), sigma))
            else:
                raise ValueError(f"unknown measurement type {kind!r}")
        return cls(tuple(out))

    def to_dict(self) -> dict[str, Any]:
        rows = []
        for m in self.measurements:
            if m.kind == "flow":
                rows.append({"type": "flow", "line": m.target, "direction": m.direction, "sigma": m.sigma})
            else:
                rows.append({"type": "injection", "bus": m.target, "sigma": m.sigma})
        return {"measurements": rows}


def build_measurement_matrix(case: GridCase, ms: MeasurementSet) -> np.ndarray:
    """Dense m x n matrix H mapping non-slack angles to the measurement vector."""
    n = case.n_states
    col = {b: k for k, b in enumerate(case.state_buses)}
    H = np.zeros((len(ms), n))
    incident: dict[int, list[Line]] = {b: [] for b in case.buses}
    for ln in case.in_service_lines:
        incident[ln.from_bus].append(ln)
        incident[ln.to_bus].append(ln)

    for r, meas in enumerate(ms):
        if meas.kind == "flow":
            ln = case.line(str(meas.target))
            if not ln.in_service:
                raise ValueError(f"measurement {r} references out-of-service line {ln.id!r}")
            b = meas.direction / ln.x
            if ln.from_bus in col:
                H[r, col[ln.from_bus]] += b
            if ln.to_bus in col:
                H[r, col[ln.to_bus]] -= b
        else:
            bus = int(meas.target)
            if bus not in incident:
                raise ValueError(f"measurement {r} references unknown bus {bus}")
            for ln in incident[bus]:
                other = ln.to_bus if ln.from_bus == bus else ln.from_bus
                b = 1.0 / ln.x
                if bus in col:
                    H[r, col[bus]] += b
                if other in col:
                    H[r, col[other]] -= b
    if len(ms) < n or np.linalg.matrix_rank(H) < n:
        raise UnobservableError(
            f"measurement set is unobservable: rank {np.linalg.matrix_rank(H) if H.size else 0} < {n} states")
    return H


def measure(case: GridCase, ms: MeasurementSet, solution: FlowSolution) -> np.ndarray:
    """Noiseless measurement vector read directly off a power-flow solution."""
    z = np.empty(len(ms))
    bus_inj = np.zeros(case.n_buses)
    for k, ln in enumerate(case.lines):
        if ln.in_service:
            bus_inj[case.bus_index(ln.from_bus)] += solution.flows[k]
            bus_inj[case.bus_index(ln.to_bus)] -= solution.flows[k]
    for r, meas in enumerate(ms):
        if meas.kind == "flow":
            z[r] = solution.flow(str(meas.target), meas.direction)
        else:
            z[r] = bus_inj[case.bus_index(int(meas.target))]
    return z


# -- perturbation -------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationPlan:
    """Multiplicative reactance changes on D-FACTS lines."""

    entries: tuple[tuple[str, float], ...] = ()
    bounds: tuple[float, float] = (0.8, 1.2)
    label: str = ""

    def __post_init__(self):
        lo, hi = self.bounds
        if not 0 < lo <= hi:
            raise ValueError(f"invalid bounds {self.bounds}")
        for line_id, factor in self.entries:
            if not factor > 0:
                raise ValueError(f"factor for line {line_id!r} must be positive")
            if not lo <= factor <= hi:
                raise ValueError(f"factor {factor} for line {line_id!r} outside bounds {self.bounds}")

    @property
    def max_deviation(self) -> float:
        return max((abs(f - 1.0) for _, f in self.entries), default=0.0)

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label, "bounds": list(self.bounds),
                "entries": [{"line": lid, "factor": f} for lid, f in self.entries]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PerturbationPlan":
        return cls(entries=tuple((str(e["line"]), float(e["factor"])) for e in data.get("entries", [])),
                   bounds=tuple(data.get("bounds", (0.8, 1.2))), label=data.get("label", ""))


def apply_perturbation(case: GridCase, plan: PerturbationPlan) -> GridCase:
    """Return a new case with the plan's reactance factors applied."""
    if not plan.entries:
        return case
    lines = list(case.lines)
    for line_id, factor in plan.entries:
        idx = case.line_index(line_id)
        ln = lines[idx]
        if not ln.dfacts:
            raise ValueError(f"line {line_id!r} has no D-FACTS device")
        lines[idx] = dataclasses.replace(ln, x=ln.x * factor)
    return dataclasses.replace(case, lines=tuple(lines))


# -- DC optimal dispatch ------------------------------------------------------

@dataclass(frozen=True)
class OpfResult:
    dispatch: tuple[float, ...]
    cost: float
    flows: np.ndarray


def ptdf(case: GridCase) -> np.ndarray:
    """Line-flow sensitivity to bus injections (slack absorbs the balance)."""
    factor, keep = _reduced_lu(case)
    n = case.n_buses
    sens = np.zeros((n, n))  # theta = sens @ p
    if factor is not None:
        sens[np.ix_(keep, keep)] = scipy.linalg.lu_solve(factor, np.eye(len(keep)), check_finite=False)
    F = np.zeros((len(case.lines), n))
    for k, ln in enumerate(case.lines):
        if ln.in_service:
            F[k, case.bus_index(ln.from_bus)] = 1.0 / ln.x
            F[k, case.bus_index(ln.to_bus)] = -1.0 / ln.x
    return F @ sens


def opf_constraints(case: GridCase):
    """Linear program data ``(c, A_ub, b_ub, A_eq, b_eq, bounds, names)`` for the DC-OPF.

    Inequality rows are the finite line limits in both directions, named
    ``limit:<line>:+`` / ``limit:<line>:-``.
    """
    if not case.generators:
        raise ValueError("case has no generators")
    S = ptdf(case)
    G = np.zeros((case.n_buses, len(case.generators)))
    for k, g in enumerate(case.generators):
        G[case.bus_index(g.bus), k] = 1.0
    d = case.demand()
    SG, Sd = S @ G, S @ d
    A_ub, b_ub, names = [], [], []
    for k, ln in enumerate(case.lines):
        if ln.in_service and math.isfinite(ln.limit):
            A_ub.append(SG[k]); b_ub.append(ln.limit + Sd[k]); names.append(f"limit:{ln.id}:+")
            A_ub.append(-SG[k]); b_ub.append(ln.limit - Sd[k]); names.append(f"limit:{ln.id}:-")
    c = np.array([g.cost for g in case.generators])
    A_eq = np.ones((1, len(case.generators)))
    b_eq = np.array([d.sum()])
    bounds = [(g.p_min, g.p_max) for g in case.generators]
    A_ub = np.array(A_ub).reshape(-1, len(case.generators))
    return c, A_ub, np.array(b_ub), A_eq, b_eq, bounds, names


def dc_opf(case: GridCase) -> OpfResult:
    """Least-cost linear dispatch subject to balance, generator and line limits."""
    c, A_ub, b_ub, A_eq, b_eq, bounds, names = opf_constraints(case)
    res = linprog(c, A_ub=A_ub if len(b_ub) else None, b_ub=b_ub if len(b_ub) else None,
                  A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        raise InfeasibleError(_infeasibility_certificate(A_ub, b_ub, A_eq, b_eq, bounds, names, case))
    if res.status != 0:
        raise RuntimeError(f"dispatch LP failed: {res.message}")
    p = _polish_vertex(np.asarray(res.x, dtype=float), A_ub, b_ub, A_eq, b_eq, bounds)
    S = ptdf(case)
    flows = S @ dispatch_injections(case, p)
    return OpfResult(tuple(float(v) for v in p), float(c @ p), flows)


def _polish_vertex(p, A_ub, b_ub, A_eq, b_eq, bounds, tol=1e-6):
    """Snap an interior-point-tolerance solution onto its exact active-set vertex."""
    rows, rhs = [A_eq[0]], [b_eq[0]]
    for k, (lo, hi) in enumerate(bounds):
        e = np.zeros(len(p)); e[k] = 1.0
        if abs(p[k] - hi) < tol:
            rows.append(e); rhs.append(hi)
        elif abs(p[k] - lo) < tol:
            rows.append(e); rhs.append(lo)
    for row, b in zip(A_ub, b_ub):
        if abs(row @ p - b) < tol:
            rows.append(row); rhs.append(b)
    A = np.array(rows)
    if np.linalg.matrix_rank(A) < len(p):
        return p
    q = np.linalg.lstsq(A, np.array(rhs), rcond=None)[0]
    feasible = (all(lo - 1e-9 <= v <= hi + 1e-9 for v, (lo, hi) in zip(q, bounds))
                and (len(b_ub) == 0 or np.all(A_ub @ q <= b_ub + 1e-9))
                and abs(A_eq[0] @ q - b_eq[0]) < 1e-9)
    return q if feasible else p


def _infeasibility_certificate(A_ub, b_ub, A_eq, b_eq, bounds, names, case) -> list[str]:
    # Elastic phase-1: every constraint gets a nonnegative slack; the ones that
    # must stay positive at the minimum-violation point are reported.
    ng = A_eq.shape[1]
    rows, rhs, labels = [], [], []
    for row, b, nm in zip(A_ub, b_ub, names):
        rows.append(row); rhs.append(b); labels.append(nm)
    for k, (lo, hi) in enumerate(bounds):
        gid = case.generators[k].id
        e = np.zeros(ng); e[k] = 1.0
        rows.append(e); rhs.append(hi); labels.append(f"p_max:{gid}")
        rows.append(-e); rhs.append(-lo); labels.append(f"p_min:{gid}")
    rows.append(A_eq[0]); rhs.append(b_eq[0]); labels.append("balance:+")
    rows.append(-A_eq[0]); rhs.append(-b_eq[0]); labels.append("balance:-")
    A = np.array(rows)
    ns = len(rows)
    A_el = np.hstack([A, -np.eye(ns)])
    c = np.concatenate([np.zeros(ng), np.ones(ns)])
    res = linprog(c, A_ub=A_el, b_ub=np.array(rhs), bounds=[(None, None)] * ng + [(0, None)] * ns,
                  method="highs")
    slack = res.x[ng:]
    return [lab for lab, s in zip(labels, slack) if s > 1e-9]
