"""Multi-level network intrusion detection over simulated substation traffic.

Levels:

* transport: per-window z-scores of packet count, mean size and mean inter-arrival
* operation: whitelist of (src, dst, protocol, function) tuples, direction and periodicity
* content: analog z-score, binary smoothed-surprisal over history entropy
* sequence: GOOSE-style stNum/sqNum monotonicity per publisher
* address: logical-to-hardware remaps and resolution-packet bursts

Rule-based levels emit score >= 1 against a threshold of 1; the statistical levels
default to a threshold of 5.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, defaultdict, deque
from dataclasses import dataclass
from statistics import median
from typing import Any, Iterable, Sequence

import numpy as np

STD_FLOOR = 1e-9
DEFAULT_WINDOW = 1.0
DEFAULT_CORRELATION_WINDOW = 2.0
DEFAULT_ADDRESS_FACTOR = 5.0
PERIODIC_MIN_SAMPLES = 3
PERIODIC_MAX_CV = 0.1
RESOLUTION_PROTOCOL = "arp"

DEFAULT_THRESHOLDS = {
    "transport": 5.0,
    "content": 5.0,
    "operation": 1.0,
    "sequence": 1.0,
    "address": 1.0,
    "decoy": 1.0,
    "command": 1.0,
    "bitw": 1.0,
    "bdd": 1.0,
}


@dataclass(frozen=True)
class FlowEvent:
    timestamp: float
    src: str
    dst: str
    protocol: str
    function: str = ""
    points: tuple[tuple[str, str, float], ...] = ()  # (point id, "binary" | "analog", value)
    size: int = 0
    st_num: int | None = None
    sq_num: int | None = None
    logical_address: str | None = None
    hardware_address: str | None = None

    @property
    def operation(self) -> tuple[str, str, str, str]:
        return (self.src, self.dst, self.protocol, self.function)

    @property
    def is_resolution(self) -> bool:
        return self.protocol == RESOLUTION_PROTOCOL

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "t": self.timestamp, "src": self.src, "dst": self.dst,
            "protocol": self.protocol, "function": self.function,
            "points": [list(p) for p in self.points], "size": self.size,
        }
        if self.st_num is not None:
            d["st_num"] = self.st_num
            d["sq_num"] = self.sq_num
        if self.logical_address is not None:
            d["logical_address"] = self.logical_address
            d["hardware_address"] = self.hardware_address
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FlowEvent":
        return cls(
            float(d["t"]), str(d["src"]), str(d["dst"]), str(d["protocol"]), str(d.get("function", "")),
            tuple((str(p[0]), str(p[1]), float(p[2])) for p in d.get("points", ())),
            int(d.get("size", 0)), d.get("st_num"), d.get("sq_num"),
            d.get("logical_address"), d.get("hardware_address"),
        )


@dataclass(frozen=True)
class AlarmRecord:
    timestamp: float
    level: str
    score: float
    detail: str
    tactic: str | None = None
    source: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d = {"t": self.timestamp, "level": self.level, "score": self.score, "detail": self.detail}
        if self.tactic is not None:
            d["tactic"] = self.tactic
        if self.source is not None:
            d["source"] = self.source
        return d


@dataclass(frozen=True)
class MetaAlert:
    timestamp: float
    end: float
    score: float
    levels: tuple[str, ...]
    alarms: tuple[AlarmRecord, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"t": self.timestamp, "end": self.end, "score": self.score,
                "levels": list(self.levels), "count": len(self.alarms)}


# -- baseline -----------------------------------------------------------------

@dataclass(frozen=True)
class FeatureStats:
    mean: float
    std: float

    def z(self, value: float) -> float:
        return abs(value - self.mean) / max(self.std, STD_FLOOR * max(1.0, abs(self.mean)))


@dataclass(frozen=True)
class TupleStats:
    count: int
    period: float | None  # median inter-arrival
    tolerance: float | None  # set only for periodic tuples

    @property
    def periodic(self) -> bool:
        return self.tolerance is not None


@dataclass(frozen=True)
class PointStats:
    kind: str
    n: int
    mean: float = 0.0
    std: float = 0.0
    counts: tuple[tuple[float, int], ...] = ()  # binary symbol -> count


@dataclass(frozen=True)
class BaselineProfile:
    window_seconds: float
    origin: float
    windows: int
    transport: dict[str, FeatureStats]
    tuples: dict[tuple[str, str, str, str], TupleStats]
    points: dict[str, PointStats]
    addresses: dict[str, str]
    resolution_rate: float  # peak resolution packets per window

    def allows(self, op: tuple[str, str, str, str]) -> bool:
        return op in self.tuples


def _window_features(events: Sequence[FlowEvent]) -> dict[str, float]:
    feats = {"count": float(len(events))}
    if events:
        feats["size"] = float(np.mean([e.size for e in events]))
    if len(events) >= 2:
        ts = [e.timestamp for e in events]
        feats["interarrival"] = float(np.mean(np.diff(ts)))
    return feats


def _full_windows(events: Sequence[FlowEvent], origin: float, w: float, start: float, end: float):
    """Yield ``(k, window_events)`` for every window lying inside ``[start, end]``."""
    k0 = max(0, math.ceil((start - origin) / w - 1e-9))
    k1 = math.floor((end - origin) / w + 1e-9)  # windows k0 .. k1-1 fit
    buckets: dict[int, list[FlowEvent]] = defaultdict(list)
    for e in events:
        k = math.floor((e.timestamp - origin) / w)
        if k0 <= k < k1:
            buckets[k].append(e)
    for k in range(k0, k1):
        yield k, buckets.get(k, [])


def learn_baseline(events: Iterable[FlowEvent], window_seconds: float = DEFAULT_WINDOW,
                   start: float | None = None, end: float | None = None) -> BaselineProfile:
    """Profile of benign traffic.

    Transport statistics use the full windows of length ``window_seconds`` laid
    from ``start`` (default: first event) up to ``end`` (default: last event).
    """
    events = sorted(events, key=lambda e: e.timestamp)
    if not events:
        raise ValueError("cannot learn a baseline from an empty stream")
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    origin = events[0].timestamp if start is None else float(start)
    stop = events[-1].timestamp if end is None else float(end)
    traffic = [e for e in events if not e.is_resolution]
    per_window = defaultdict(list)
    res_counts = []
    nwin = 0
    for _, win in _full_windows(events, origin, window_seconds, origin, stop):
        nwin += 1
        data = [e for e in win if not e.is_resolution]
        for name, v in _window_features(data).items():
            per_window[name].append(v)
        res_counts.append(sum(e.is_resolution for e in win))
    transport = {name: FeatureStats(float(np.mean(v)), float(np.std(v))) for name, v in per_window.items()}

    times: dict[tuple, list[float]] = defaultdict(list)
    for e in traffic:
        times[e.operation].append(e.timestamp)
    tuples = {}
    for op, ts in times.items():
        gaps = np.diff(ts)
        period = float(median(gaps)) if len(gaps) else None
        tol = None
        if len(ts) >= PERIODIC_MIN_SAMPLES and period and period > 0:
            sd = float(np.std(gaps))
            if sd / float(np.mean(gaps)) < PERIODIC_MAX_CV:
                tol = max(0.1 * period, 3.0 * sd)
        tuples[op] = TupleStats(len(ts), period, tol)

    values: dict[str, list[float]] = defaultdict(list)
    kinds: dict[str, str] = {}
    for e in traffic:
        for pid, kind, v in e.points:
            values[pid].append(v)
            kinds[pid] = kind
    points = {}
    for pid, vs in values.items():
        if kinds[pid] == "binary":
            points[pid] = PointStats("binary", len(vs), counts=tuple(sorted(Counter(vs).items())))
        else:
            points[pid] = PointStats("analog", len(vs), float(np.mean(vs)), float(np.std(vs)))

    addresses = {}
    for e in events:
        if e.is_resolution and e.logical_address is not None:
            addresses.setdefault(e.logical_address, e.hardware_address)
    rate = float(max(res_counts)) if res_counts else 0.0
    return BaselineProfile(window_seconds, origin, nwin, transport, tuples, points, addresses, rate)


# -- level scores ---------------------------------------------------------------

def transport_score(window_events: Sequence[FlowEvent], profile: BaselineProfile) -> float:
    """Max over features of ``|observed - mean| / std``; empty windows score on count only."""
    feats = _window_features([e for e in window_events if not e.is_resolution])
    scores = [profile.transport[name].z(v) for name, v in feats.items() if name in profile.transport]
    return max(scores, default=0.0)


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    detail: str = ""
    score: float = 0.0

    def __bool__(self):
        return self.ok


PASS = CheckResult(True)


def operation_check(event: FlowEvent, profile: BaselineProfile,
                    last_seen: dict | None = None) -> CheckResult:
    """Whitelist, direction and periodicity check for one event.

    ``last_seen`` maps operation tuples to their previous arrival time; it is
    updated in place when given.
    """
    op = event.operation
    stats = profile.tuples.get(op)
    if stats is None:
        src, dst, proto, func = op
        if (dst, src, proto, func) in profile.tuples:
            return CheckResult(False, f"wrong direction {src}->{dst} {proto}/{func}", 1.0)
        if any(t[:3] == op[:3] for t in profile.tuples):
            return CheckResult(False, f"unseen operation: invalid function code {func!r} for {src}->{dst} {proto}",
                               1.0)
        return CheckResult(False, f"unseen operation {src}->{dst} {proto}/{func}", 1.0)
    if last_seen is None:
        return PASS
    prev = last_seen.get(op)
    last_seen[op] = event.timestamp
    if prev is None or not stats.periodic:
        return PASS
    dev = abs((event.timestamp - prev) - stats.period)
    if dev > stats.tolerance:
        return CheckResult(False, f"periodicity {src_dst(op)} gap {event.timestamp - prev:.6g}s vs {stats.period:.6g}s",
                           dev / stats.tolerance)
    return PASS


def src_dst(op) -> str:
    return f"{op[0]}->{op[1]} {op[2]}/{op[3]}"


def content_score(history: PointStats | Sequence[float], value: float, kind: str | None = None) -> float:
    """Deviation of ``value`` from a point's history.

    Analog: ``|v - mean| / std``. Binary: ``-log p(v)`` divided by the history
    entropy, with Laplace smoothing (alpha = 1) over the binary alphabet.
    """
    if not isinstance(history, PointStats):
        vs = [float(v) for v in history]
        if not vs:
            raise ValueError("content history is empty")
        kind = kind or "analog"
        if kind == "binary":
            history = PointStats("binary", len(vs), counts=tuple(sorted(Counter(vs).items())))
        else:
            history = PointStats("analog", len(vs), float(np.mean(vs)), float(np.std(vs)))
    if history.kind == "analog":
        return FeatureStats(history.mean, history.std).z(value)
    counts = dict(history.counts)
    alphabet = sorted(set(counts) | {0.0, 1.0, float(value)})
    total = history.n + len(alphabet)
    probs = {s: (counts.get(s, 0) + 1) / total for s in alphabet}
    entropy = -sum(p * math.log(p) for p in probs.values())
    return -math.log(probs[float(value)]) / entropy


class SequenceMonitor:
    """Per-publisher stNum/sqNum rules; state advances only on passing messages."""

    def __init__(self):
        self.state: dict[str, tuple[int, int]] = {}

    def check(self, publisher: str, st_num: int, sq_num: int) -> CheckResult:
        prev = self.state.get(publisher)
        if prev is not None:
            st0, sq0 = prev
            if st_num < st0:
                return CheckResult(False, f"stNum regression {st0}->{st_num} from {publisher}", 1.0)
            if st_num > st0 + 1:
                return CheckResult(False, f"stNum jump {st0}->{st_num} from {publisher}", 1.0)
            if st_num == st0 and sq_num <= sq0:
                return CheckResult(False, f"sqNum non-monotone {sq0}->{sq_num} at stNum {st_num} from {publisher}", 1.0)
        self.state[publisher] = (st_num, sq_num)
        return PASS


def sequence_check(stream: Iterable[tuple[int, int]], publisher: str = "publisher") -> list[CheckResult]:
    mon = SequenceMonitor()
    return [mon.check(publisher, st, sq) for st, sq in stream]


class AddressMonitor:
    """Flags hardware-address changes for known logical addresses and resolution bursts."""

    def __init__(self, known: dict[str, str] | None = None, baseline_rate: float = 0.0,
                 window_seconds: float = DEFAULT_WINDOW, factor: float = DEFAULT_ADDRESS_FACTOR):
        self.known = dict(known or {})
        self.limit = factor * max(baseline_rate, 1.0)
        self.window = window_seconds
        self._recent: deque[float] = deque()
        self._bursting = False

    def check(self, event: FlowEvent) -> list[CheckResult]:
        out = []
        la, hw = event.logical_address, event.hardware_address
        if la is not None:
            prev = self.known.get(la)
            if prev is None:
                self.known[la] = hw
            elif prev != hw:
                out.append(CheckResult(False, f"address remap {la}: {prev} -> {hw}", 1.0))
        self._recent.append(event.timestamp)
        while self._recent and self._recent[0] <= event.timestamp - self.window:
            self._recent.popleft()
        rate = len(self._recent)
        if rate > self.limit and not self._bursting:
            out.append(CheckResult(False, f"resolution burst {rate} packets/{self.window:g}s", rate / self.limit))
        self._bursting = rate > self.limit
        return out


def address_monitor(events: Iterable[FlowEvent], known: dict[str, str] | None = None,
                    baseline_rate: float = 0.0, window_seconds: float = DEFAULT_WINDOW,
                    factor: float = DEFAULT_ADDRESS_FACTOR) -> list[tuple[float, CheckResult]]:
    mon = AddressMonitor(known, baseline_rate, window_seconds, factor)
    return [(e.timestamp, r) for e in events if e.is_resolution for r in mon.check(e)]


def meta_alert(alarms: Sequence[AlarmRecord]) -> MetaAlert | None:
    """One aggregate for alarms already known to share a correlation window."""
    if not alarms:
        return None
    levels = tuple(dict.fromkeys(a.level for a in alarms))
    return MetaAlert(min(a.timestamp for a in alarms), max(a.timestamp for a in alarms),
                     max(a.score for a in alarms), levels, tuple(alarms))


def correlate(alarms: Iterable[AlarmRecord], window: float = DEFAULT_CORRELATION_WINDOW) -> list[MetaAlert]:
    """Group time-ordered alarms into meta-alerts; a group spans ``window`` seconds from its first alarm."""
    out, group = [], []
    for a in sorted(alarms, key=lambda a: a.timestamp):
        if group and a.timestamp >= group[0].timestamp + window:
            out.append(meta_alert(group))
            group = []
        group.append(a)
    if group:
        out.append(meta_alert(group))
    return out


# -- streaming detector -----------------------------------------------------------

_TACTICS = {
    "operation": "Unauthorized Command Message",
    "sequence": "Spoof Reporting Message",
    "address": "Adversary-in-the-Middle",
    "content": "Manipulation of View",
    "transport": "Denial of Service",
}


class IntrusionDetector:
    """Single-writer detector consuming a time-ordered event stream."""

    def __init__(self, profile: BaselineProfile, thresholds: dict[str, float] | None = None,
                 levels: Iterable[str] = ("transport", "operation", "content", "sequence", "address"),
                 address_factor: float = DEFAULT_ADDRESS_FACTOR):
        self.profile = profile
        self.thresholds = {**DEFAULT_THRESHOLDS, **(thresholds or {})}
        self.levels = frozenset(levels)
        self.last_seen: dict = {}
        self.sequence = SequenceMonitor()
        self.address = AddressMonitor(profile.addresses, profile.resolution_rate,
                                      profile.window_seconds, address_factor)
        self._window_k: int | None = None
        self._window_events: list[FlowEvent] = []
        self._start: float | None = None
        self.alarms: list[AlarmRecord] = []

    def _emit(self, t, level, score, detail, source=None) -> list[AlarmRecord]:
        if level not in self.levels or score < self.thresholds[level]:
            return []
        rec = AlarmRecord(t, level, float(score), detail, _TACTICS.get(level), source)
        self.alarms.append(rec)
        return [rec]

    def _close_windows(self, upto_k: int) -> list[AlarmRecord]:
        out = []
        w, origin = self.profile.window_seconds, self.profile.origin
        if "transport" not in self.levels or not self.profile.transport:
            return out
        while self._window_k is not None and self._window_k < upto_k:
            k = self._window_k
            if origin + k * w >= self._start - 1e-9:
                evs = [e for e in self._window_events if math.floor((e.timestamp - origin) / w) == k]
                s = transport_score(evs, self.profile)
                out += self._emit(origin + (k + 1) * w, "transport", s, f"window {k} traffic deviation")
            self._window_events = [e for e in self._window_events if math.floor((e.timestamp - origin) / w) > k]
            self._window_k = k + 1
        return out

    def observe(self, event: FlowEvent) -> list[AlarmRecord]:
        out = []
        w, origin = self.profile.window_seconds, self.profile.origin
        if self._start is None:
            self._start = event.timestamp
            self._window_k = max(0, math.floor((event.timestamp - origin) / w))
        k = math.floor((event.timestamp - origin) / w)
        out += self._close_windows(k)
        self._window_events.append(event)
        t = event.timestamp
        if event.is_resolution:
            for r in self.address.check(event):
                out += self._emit(t, "address", r.score, r.detail, event.src)
            return out
        r = operation_check(event, self.profile, self.last_seen)
        if not r:
            out += self._emit(t, "operation", r.score, r.detail, event.src)
        for pid, kind, v in event.points:
            hist = self.profile.points.get(pid)
            if hist is None:
                continue
            s = content_score(hist, v)
            out += self._emit(t, "content", s, f"point {pid} value {v:.6g}", event.src)
        if event.st_num is not None:
            r = self.sequence.check(f"{event.src}->{event.dst}", event.st_num, event.sq_num)
            if not r:
                out += self._emit(t, "sequence", r.score, r.detail, event.src)
        return out

    def finish(self, end_time: float) -> list[AlarmRecord]:
        """Score the remaining windows that end no later than ``end_time``."""
        if self._start is None:
            return []
        k_end = math.floor((end_time - self.profile.origin) / self.profile.window_seconds + 1e-9)
        return self._close_windows(k_end)


def replay(events: Iterable[FlowEvent], profile: BaselineProfile, end_time: float | None = None,
           **kwargs) -> list[AlarmRecord]:
    events = sorted(events, key=lambda e: e.timestamp)
    det = IntrusionDetector(profile, **kwargs)
    for e in events:
        det.observe(e)
    if events:
        det.finish(events[-1].timestamp if end_time is None else end_time)
    return det.alarms


# -- log interface --------------------------------------------------------------

class LogFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def flow_events_from_log(lines: Iterable[str]) -> list[FlowEvent]:
    """Frame records of a JSON-lines event log (records with ``"type": "frame"``)."""
    out = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise LogFormatError(lineno, "record is not an object")
        if rec.get("type") != "frame":
            continue
        try:
            out.append(FlowEvent.from_dict(rec))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise LogFormatError(lineno, f"malformed frame record ({exc})") from None
    return out


def alarms_to_jsonl(alarms: Iterable[AlarmRecord]) -> str:
    return "".join(json.dumps(a.to_dict()) + "\n" for a in alarms)


ALARM_SUMMARY_HEADER = ("level", "count", "max_score", "first_t", "last_t")


def alarm_summary_csv(alarms: Iterable[AlarmRecord]) -> str:
    """Per-level alarm counts, in order of first occurrence."""
    by_level: dict[str, list[AlarmRecord]] = {}
    for a in alarms:
        by_level.setdefault(a.level, []).append(a)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ALARM_SUMMARY_HEADER)
    for level, recs in by_level.items():
        w.writerow([level, len(recs), repr(max(a.score for a in recs)),
                    repr(min(a.timestamp for a in recs)), repr(max(a.timestamp for a in recs))])
    return buf.getvalue()
