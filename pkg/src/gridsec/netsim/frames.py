"""Abstract protocol frames exchanged by simulated nodes."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any

from ..ids import FlowEvent

BASE_FRAME_BYTES = 64
POINT_BYTES = 16


@dataclass(frozen=True)
class Frame:
    id: int
    src: str
    dst: str
    protocol: str  # "goose" | "mms" | "104" | "arp" | "read"
    function: str = ""
    points: tuple[tuple[str, str, float], ...] = ()
    st_num: int | None = None
    sq_num: int | None = None
    logical_address: str | None = None
    hardware_address: str | None = None
    auth: Any = None  # bump-in-the-wire trailer, when wrapped
    tampered: bool = False  # ground truth, never inspected by defenses

    @property
    def size(self) -> int:
        n = BASE_FRAME_BYTES + POINT_BYTES * len(self.points)
        if self.auth is not None:
            n += self.auth.size
        return n

    def point(self, pid: str) -> float | None:
        for p, _, v in self.points:
            if p == pid:
                return v
        return None

    def with_point(self, pid: str, value: float) -> "Frame":
        pts = tuple((p, k, float(value)) if p == pid else (p, k, v) for p, k, v in self.points)
        return replace(self, points=pts)

    def body(self) -> bytes:
        """Canonical bytes of the authenticated content (everything but the trailer)."""
        doc = [self.src, self.dst, self.protocol, self.function, [list(p) for p in self.points],
               self.st_num, self.sq_num]
        return json.dumps(doc, separators=(",", ":")).encode()

    def flow_event(self, t: float) -> FlowEvent:
        return FlowEvent(t, self.src, self.dst, self.protocol, self.function, self.points, self.size,
                         self.st_num, self.sq_num, self.logical_address, self.hardware_address)
