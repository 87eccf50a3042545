"""Bump-in-the-wire wrappers: per-channel LoMoS proofs plus a keyed provenance chain."""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .. import lomos
from .frames import Frame

DIGEST_BITS = 128
DEFAULT_LEAF_COUNT = 4096


def frame_digest(body: bytes) -> bytes:
    """128-bit message authenticated per frame: truncated SHA-256 of the body."""
    return hashlib.sha256(body).digest()[: DIGEST_BITS // 8]


def provenance_tag(key: bytes, prev_tag: bytes, body: bytes) -> bytes:
    return hashlib.sha256(key + prev_tag + body).digest()


@dataclass(frozen=True)
class AuthTrailer:
    channel: tuple[str, str]
    epoch: int
    proof: lomos.LomosProof
    chain: tuple[tuple[str, bytes], ...]

    @property
    def size(self) -> int:
        return 8 + len(self.proof.to_bytes()) + sum(len(w) + len(t) for w, t in self.chain)


@dataclass(frozen=True)
class BitwResult:
    ok: bool
    frame: Frame | None
    reason: str = ""

    def __bool__(self):
        return self.ok


class _Sender:
    def __init__(self):
        self.tree: lomos.TriLeafTree | None = None
        self.epoch = -1


class BitwNetwork:
    """Key material and channel state for a set of wrappers.

    ``wrappers`` maps each protected node to its wrapper id. ``path_policy``
    optionally maps ``(src node, dst node)`` to the expected sequence of
    wrappers on the provenance chain; the default is the source's wrapper alone.
    """

    def __init__(self, wrappers: Mapping[str, str], seed: int = 0, leaf_count: int = DEFAULT_LEAF_COUNT,
                 path_policy: Mapping[tuple[str, str], Sequence[str]] | None = None):
        self.wrapper_of = dict(wrappers)
        self.seed = seed
        self.leaf_count = leaf_count
        self.path_policy = {k: tuple(v) for k, v in (path_policy or {}).items()}
        ids = sorted(set(self.wrapper_of.values()))
        self.keys = {w: hashlib.sha256(f"bitw-provenance:{seed}:{w}".encode()).digest() for w in ids}
        self.signers = {w: lomos.keygen(f"bitw-sign:{seed}:{w}") for w in ids}
        self._senders: dict[tuple[str, str], _Sender] = {}
        self._receivers: dict[tuple[str, str], tuple[int, lomos.VerifierState]] = {}
        self.rekeys: list[tuple[tuple[str, str], int]] = []

    def _rekey(self, channel: tuple[str, str]) -> None:
        snd = self._senders.setdefault(channel, _Sender())
        snd.epoch += 1
        sk, pk = self.signers[channel[0]]
        snd.tree = lomos.setup(sk, self.leaf_count, seed=f"{self.seed}:{channel[0]}:{channel[1]}:{snd.epoch}")
        # the commitment reaches the receiver out of band, ahead of the first proof
        state = lomos.verify_setup(pk, snd.tree.root, snd.tree.root_signature, self.leaf_count)
        self._receivers[channel] = (snd.epoch, state)
        self.rekeys.append((channel, snd.epoch))

    def expected_path(self, src: str, dst: str) -> tuple[str, ...]:
        return self.path_policy.get((src, dst), (self.wrapper_of[src],))

    def outbound(self, frame: Frame, via: Sequence[str] | None = None) -> Frame:
        """Append proof and provenance chain for a frame leaving ``frame.src``'s wrapper."""
        src_w = self.wrapper_of[frame.src]
        dst_w = self.wrapper_of[frame.dst]
        channel = (src_w, dst_w)
        snd = self._senders.get(channel)
        if snd is None or lomos.remaining_capacity(snd.tree) < DIGEST_BITS + 1:
            self._rekey(channel)
            snd = self._senders[channel]
        body = frame.body()
        proof = lomos.prove(snd.tree, frame_digest(body))
        chain, tag = [], b""
        for w in (via or (src_w,)):
            tag = provenance_tag(self.keys[w], tag, body)
            chain.append((w, tag))
        return replace(frame, auth=AuthTrailer(channel, snd.epoch, proof, tuple(chain)))

    def inbound(self, frame: Frame) -> BitwResult:
        """Verify and strip at the destination's wrapper; failures are drops."""
        auth = frame.auth
        if not isinstance(auth, AuthTrailer):
            return BitwResult(False, None, "missing authentication")
        dst_w = self.wrapper_of.get(frame.dst)
        if dst_w is None or auth.channel[1] != dst_w:
            return BitwResult(False, None, "path policy: wrong destination wrapper")
        body = frame.body()
        recv = self._receivers.get(auth.channel)
        if recv is None or recv[0] != auth.epoch:
            return BitwResult(False, None, "unknown channel epoch")
        res = lomos.verify(recv[1], frame_digest(body), auth.proof)
        if not res:
            return BitwResult(False, None, f"lomos {res.reason}")
        expected = self.expected_path(frame.src, frame.dst) if frame.src in self.wrapper_of else ()
        if tuple(w for w, _ in auth.chain) != expected or auth.channel[0] != expected[0]:
            return BitwResult(False, None, "path policy: unexpected provenance chain")
        tag = b""
        for w, t in auth.chain:
            tag = provenance_tag(self.keys[w], tag, body)
            if not hmac.compare_digest(tag, t):
                return BitwResult(False, None, "path policy: provenance tag mismatch")
        return BitwResult(True, replace(frame, auth=None))


def bitw_process(network: BitwNetwork, direction: str, frame: Frame) -> BitwResult:
    if direction == "out":
        return BitwResult(True, network.outbound(frame))
    if direction == "in":
        return network.inbound(frame)
    raise ValueError("direction must be 'in' or 'out'")
