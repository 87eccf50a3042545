"""False-data-injection attack vectors and their stealth against a measurement model."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

STEALTH_RTOL = 1e-9


class StealthyEquivalentWarning(UserWarning):
    """A hand-built offset pattern turned out to lie in col(H)."""


@dataclass(frozen=True)
class AttackVector:
    a: np.ndarray
    kind: str  # "stealthy" | "gross" | "custom"
    c: np.ndarray | None = None
    indices: tuple[int, ...] = ()
    offsets: tuple[float, ...] = ()
    magnitude: float | None = None
    seed: int | None = None
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.a)

    def to_json(self) -> str:
        doc: dict[str, Any] = {"kind": self.kind, "m": len(self.a)}
        if self.c is not None:
            doc["c"] = [float(v) for v in self.c]
        if self.indices:
            doc["indices"] = list(self.indices)
            doc["offsets"] = list(self.offsets)
        if self.magnitude is not None:
            doc["magnitude"] = self.magnitude
        if self.seed is not None:
            doc["seed"] = self.seed
        if self.kind == "custom":
            doc["a"] = [float(v) for v in self.a]
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str, H=None) -> "AttackVector":
        """Rebuild an attack from :meth:`to_json` output.

        Stealthy attacks store only ``c``; replaying them needs the ``H``
        they were crafted against.
        """
        doc = json.loads(text)
        kind = doc["kind"]
        if "c" in doc:
            if H is None:
                raise ValueError("replaying a state-space attack requires H")
            av = stealthy_attack(H, doc["c"])
            return AttackVector(av.a, kind, av.c, magnitude=doc.get("magnitude"), seed=doc.get("seed"))
        if "indices" in doc:
            return AttackVector(gross_attack(doc["m"], doc["indices"], doc["offsets"]).a, kind,
                                indices=tuple(doc["indices"]), offsets=tuple(doc["offsets"]))
        return AttackVector(np.asarray(doc["a"], dtype=float), kind)


def stealthy_attack(H, c) -> AttackVector:
    """``a = H c``: shifts the estimate by ``c`` without changing the residual."""
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    if c.shape != (H.shape[1],):
        raise ValueError(f"c must have length {H.shape[1]}, got shape {c.shape}")
    return AttackVector(H @ c, "stealthy", c)


def random_stealthy_attack(H, magnitude: float, seed=None) -> AttackVector:
    """Stealthy attack with ``c`` drawn uniformly from the infinity-ball of radius ``magnitude``.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    if not magnitude > 0:
        raise ValueError("magnitude must be positive")
    H = np.asarray(H, dtype=float)
    rng = np.random.default_rng(seed)
    c = rng.uniform(-magnitude, magnitude, size=H.shape[1])
    av = stealthy_attack(H, c)
    return AttackVector(av.a, "stealthy", c, magnitude=magnitude,
                        seed=seed if isinstance(seed, (int, np.integer)) else None)


def gross_attack(m: int, indices: Sequence[int], offsets: Sequence[float] | float, H=None) -> AttackVector:
    """Offsets added to individual measurements.

    When ``H`` is supplied and the pattern happens to lie in its column space
    the attack is reported as stealthy, with a warning.
    """
    indices = [int(i) for i in indices]
    offs = np.broadcast_to(np.asarray(offsets, dtype=float), (len(indices),))
    a = np.zeros(m)
    for i, off in zip(indices, offs):
        if not 0 <= i < m:
            raise IndexError(f"measurement index {i} out of range for m = {m}")
        a[i] += off
    kind = "gross"
    if H is not None and np.any(a):
        stealthy, _ = is_stealthy_against(a, H)
        if stealthy:
            warnings.warn("offset pattern lies in the column space of H; it is undetectable",
                          StealthyEquivalentWarning, stacklevel=2)
            kind = "stealthy"
    return AttackVector(a, kind, indices=tuple(indices), offsets=tuple(float(o) for o in offs))


def projection_residual(a, H) -> float:
    """``||(I - H (H^T H)^{-1} H^T) a||_2`` computed through an orthonormal basis."""
    Q, _ = np.linalg.qr(np.asarray(H, dtype=float))
    a = np.asarray(a, dtype=float)
    return float(np.linalg.norm(a - Q @ (Q.T @ a)))


def is_stealthy_against(a, H) -> tuple[bool, float]:
    """Whether ``a`` lies in col(H), plus the projection residual.

    The zero vector counts as stealthy.
    """
    vec = a.a if isinstance(a, AttackVector) else np.asarray(a, dtype=float)
    H = np.asarray(H, dtype=float)
    if vec.shape != (H.shape[0],):
        raise ValueError(f"attack has length {vec.shape}, expected {H.shape[0]}")
    res = projection_residual(vec, H)
    return res < STEALTH_RTOL * max(1.0, float(np.linalg.norm(vec))), res
