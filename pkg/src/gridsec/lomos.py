"""LoMoS: less-online/more-offline message authentication on tri-leaf hash trees.

Offline, the publisher draws ``3 L`` secret nonces, hashes them, and commits to
them with a Merkle tree whose ``L`` leaves each cover three nonce digests
(0-bit, 1-bit, break). The root is signed once with an ordinary signature
scheme. Online, a message of ``k`` bits consumes ``k + 1`` consecutive leaves:
for each bit the nonce in the matching slot is revealed, and the last leaf
reveals its break nonce. The subscriber re-hashes the revealed nonces into the
slots named by the message, fills the other slots and the missing subtrees from
digests carried in the proof, and compares the result against the signed root.
Only hashing happens online.

Node numbering follows the usual figure layout: leaves are ``h_0 .. h_{L-1}``,
then each level above continues left to right, ending at the root ``h_{2L-2}``.

Wire formats (all integers big-endian)::

    commitment := root[32] | leaf_count:u32 | sig_len:u16 | signature
    proof      := start_leaf:u32 | n_records:u32 | n_records * (nonce[32] | digest[32] | digest[32])
                  | n_path:u32 | n_path * digest[32]

Path digests appear in bottom-up level order, left sibling before right.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import random
import struct
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519

NONCE_BYTES = 32
DIGEST_BYTES = 32
SLOT_ZERO, SLOT_ONE, SLOT_BREAK = 0, 1, 2
_LEAF_TAG = b"\x00"
_NODE_TAG = b"\x01"
_COMMIT_TAG = b"LoMoS-root\x00"
THROUGHPUT_TARGET = 4000.0
_BIT_VALUES = frozenset((0, 1))

_sha256 = hashlib.sha256


class SetupRejected(Exception):
    pass


class TreeExhausted(Exception):
    pass


# -- underlying signature -----------------------------------------------------

def _seed_bytes(seed) -> bytes:
    if isinstance(seed, bytes):
        raw = seed
    elif isinstance(seed, str):
        raw = seed.encode()
    else:
        raw = int(seed).to_bytes(16, "big", signed=True)
    return raw


@dataclass(frozen=True)
class PublicKey:
    scheme: str
    raw: bytes

    def verify(self, data: bytes, signature: bytes) -> bool:
        try:
            if self.scheme == "ed25519":
                ed25519.Ed25519PublicKey.from_public_bytes(self.raw).verify(signature, data)
            else:
                key = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), self.raw)
                key.verify(signature, data, ec.ECDSA(hashes.SHA256()))
        except (InvalidSignature, ValueError):
            return False
        return True


class SigningKey:
    def __init__(self, scheme: str, key):
        self.scheme = scheme
        self._key = key

    def sign(self, data: bytes) -> bytes:
        if self.scheme == "ed25519":
            return self._key.sign(data)
        return self._key.sign(data, ec.ECDSA(hashes.SHA256()))

    def public_key(self) -> PublicKey:
        pub = self._key.public_key()
        if self.scheme == "ed25519":
            raw = pub.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        else:
            raw = pub.public_bytes(serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint)
        return PublicKey(self.scheme, raw)


def keygen(seed=None, scheme: str = "ed25519") -> tuple[SigningKey, PublicKey]:
    """Key pair for the root signature; deterministic when ``seed`` is given.

    ``ed25519`` is the default (deterministic signatures); ``ecdsa-p256`` is
    available for deployments that require ECDSA.
    """
    material = os.urandom(32) if seed is None else _sha256(b"lomos-keygen" + _seed_bytes(seed)).digest()
    if scheme == "ed25519":
        sk = SigningKey(scheme, ed25519.Ed25519PrivateKey.from_private_bytes(material))
    elif scheme == "ecdsa-p256":
        order = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
        secret = int.from_bytes(material, "big") % (order - 1) + 1
        sk = SigningKey(scheme, ec.derive_private_key(secret, ec.SECP256R1()))
    else:
        raise ValueError(f"unknown signature scheme {scheme!r}")
    return sk, sk.public_key()


class CountingSigner:
    """Wraps a signing key and its public key, counting every signature operation."""

    def __init__(self, signing_key: SigningKey):
        self._inner = signing_key
        self.sign_calls = 0
        self.verify_calls = 0
        self.scheme = signing_key.scheme

    def sign(self, data: bytes) -> bytes:
        self.sign_calls += 1
        return self._inner.sign(data)

    def verify(self, data: bytes, signature: bytes) -> bool:
        self.verify_calls += 1
        return self._inner.public_key().verify(data, signature)

    def public_key(self) -> "CountingSigner":
        return self

    @property
    def calls(self) -> int:
        return self.sign_calls + self.verify_calls


# -- tree ---------------------------------------------------------------------

def _commitment_bytes(root: bytes, leaf_count: int) -> bytes:
    return _COMMIT_TAG + root + struct.pack(">I", leaf_count)


def _leaf_digest(t0: bytes, t1: bytes, t2: bytes) -> bytes:
    return _sha256(_LEAF_TAG + t0 + t1 + t2).digest()


def _node_digest(left: bytes, right: bytes) -> bytes:
    return _sha256(_NODE_TAG + left + right).digest()


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def level_offset(leaf_count: int, level: int) -> int:
    """Label of the leftmost node on ``level`` (level 0 = leaves)."""
    off, size = 0, leaf_count
    for _ in range(level):
        off += size
        size //= 2
    return off


def auth_path_nodes(leaf_count: int, start: int, count: int) -> list[tuple[int, int]]:
    """``(level, index)`` of the digests a verifier needs besides the consumed leaves."""
    need = []
    lo, hi, size, level = start, start + count, leaf_count, 0
    while size > 1:
        if lo % 2:
            need.append((level, lo - 1))
        if hi % 2:
            need.append((level, hi))
        lo, hi = lo // 2, (hi + 1) // 2
        size //= 2
        level += 1
    return need


def auth_path_labels(leaf_count: int, start: int, count: int) -> list[int]:
    return [level_offset(leaf_count, lv) + i for lv, i in auth_path_nodes(leaf_count, start, count)]


@dataclass
class TriLeafTree:
    leaf_count: int
    nonces: list[bytes] = field(repr=False)
    nonce_digests: list[bytes] = field(repr=False)
    nodes: list[bytes] = field(repr=False)  # labelled h_0 .. h_{2L-2}
    root_signature: bytes = b""
    next_free_leaf: int = 0
    # per leaf, the record disclosed for each slot; precomputed offline
    disclosures: list[tuple["LeafRecord", "LeafRecord", "LeafRecord"]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.disclosures:
            n, t = self.nonces, self.nonce_digests
            self.disclosures = [
                (LeafRecord(n[i], t[i + 1], t[i + 2]), LeafRecord(n[i + 1], t[i], t[i + 2]),
                 LeafRecord(n[i + 2], t[i], t[i + 1]))
                for i in range(0, 3 * self.leaf_count, 3)
            ]

    @property
    def root(self) -> bytes:
        return self.nodes[-1]

    @property
    def leaf_digests(self) -> list[bytes]:
        return self.nodes[: self.leaf_count]

    def node(self, level: int, index: int) -> bytes:
        return self.nodes[level_offset(self.leaf_count, level) + index]

    def commitment(self) -> "TreeCommitment":
        return TreeCommitment(self.root, self.leaf_count, self.root_signature)


def _merkle_nodes(leaves: list[bytes]) -> list[bytes]:
    nodes = list(leaves)
    level = leaves
    while len(level) > 1:
        level = [_node_digest(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        nodes.extend(level)
    return nodes


def recompute_root(nonce_digests: Sequence[bytes]) -> bytes:
    """Root from the full list of ``3 L`` nonce digests."""
    leaves = [_leaf_digest(*nonce_digests[i:i + 3]) for i in range(0, len(nonce_digests), 3)]
    return _merkle_nodes(leaves)[-1]


def setup(signing_key, leaf_count: int, seed=None) -> TriLeafTree:
    """Offline phase: draw nonces, build the tri-leaf tree and sign its root."""
    if not isinstance(leaf_count, int) or leaf_count < 2 or not _is_power_of_two(leaf_count):
        raise ValueError(f"leaf_count must be a power of two >= 2, got {leaf_count!r}")
    total = 3 * leaf_count * NONCE_BYTES
    if seed is None:
        pool = os.urandom(total)
    else:
        pool = hashlib.shake_256(b"lomos-nonces" + _seed_bytes(seed)).digest(total)
    nonces = [pool[i:i + NONCE_BYTES] for i in range(0, total, NONCE_BYTES)]
    digests = [_sha256(n).digest() for n in nonces]
    leaves = [_leaf_digest(digests[i], digests[i + 1], digests[i + 2]) for i in range(0, len(digests), 3)]
    nodes = _merkle_nodes(leaves)
    signature = signing_key.sign(_commitment_bytes(nodes[-1], leaf_count))
    return TriLeafTree(leaf_count, nonces, digests, nodes, signature, 0)


@dataclass(frozen=True)
class TreeCommitment:
    root: bytes
    leaf_count: int
    signature: bytes

    def to_bytes(self) -> bytes:
        return self.root + struct.pack(">IH", self.leaf_count, len(self.signature)) + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "TreeCommitment":
        if len(data) < DIGEST_BYTES + 6:
            raise ValueError("truncated commitment")
        root = data[:DIGEST_BYTES]
        leaf_count, sig_len = struct.unpack_from(">IH", data, DIGEST_BYTES)
        sig = data[DIGEST_BYTES + 6:]
        if len(sig) != sig_len:
            raise ValueError("commitment signature length mismatch")
        return cls(root, leaf_count, sig)


@dataclass
class VerifierState:
    root: bytes
    leaf_count: int
    public_key: object
    cursor: int = 0


def verify_setup(public_key, root: bytes, root_signature: bytes, leaf_count: int) -> VerifierState:
    """Offline check of a published root; returns a fresh verifier state."""
    if not _is_power_of_two(leaf_count) or leaf_count < 2:
        raise SetupRejected("invalid leaf count")
    if not public_key.verify(_commitment_bytes(root, leaf_count), root_signature):
        raise SetupRejected("root signature does not verify")
    return VerifierState(root, leaf_count, public_key, 0)


# -- online phase -------------------------------------------------------------

class LeafRecord(NamedTuple):
    nonce: bytes
    other_a: bytes  # digests of the two unrevealed slots, in slot order
    other_b: bytes


@dataclass(frozen=True)
class LomosProof:
    start_leaf: int
    records: tuple[LeafRecord, ...]
    path: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        parts = [struct.pack(">II", self.start_leaf, len(self.records))]
        parts.extend(r.nonce + r.other_a + r.other_b for r in self.records)
        parts.append(struct.pack(">I", len(self.path)))
        parts.extend(self.path)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LomosProof":
        try:
            start, n = struct.unpack_from(">II", data, 0)
            off = 8
            recs = []
            for _ in range(n):
                chunk = data[off:off + 96]
                if len(chunk) != 96:
                    raise ValueError("truncated proof record")
                recs.append(LeafRecord(chunk[:32], chunk[32:64], chunk[64:]))
                off += 96
            (npath,) = struct.unpack_from(">I", data, off)
            off += 4
            path = tuple(data[off + 32 * i: off + 32 * (i + 1)] for i in range(npath))
            off += 32 * npath
        except struct.error:
            raise ValueError("truncated proof") from None
        if off != len(data) or any(len(p) != 32 for p in path):
            raise ValueError("malformed proof")
        return cls(start, tuple(recs), path)


def as_bits(message) -> tuple[int, ...]:
    """Normalise a message to a bit tuple.

    Accepts a ``'0'/'1'`` string, a sequence of 0/1 values, or ``bytes``
    (most-significant bit first).
    """
    if isinstance(message, (bytes, bytearray)):
        return tuple((byte >> (7 - k)) & 1 for byte in message for k in range(8))
    if isinstance(message, str):
        if any(ch not in "01" for ch in message):
            raise ValueError("bit strings may only contain '0' and '1'")
        return tuple(1 if ch == "1" else 0 for ch in message)
    bits = tuple(map(int, message))
    if not _BIT_VALUES.issuperset(bits):
        raise ValueError("message bits must be 0 or 1")
    return bits


def remaining_capacity(tree: TriLeafTree) -> int:
    return tree.leaf_count - tree.next_free_leaf


def prove(tree: TriLeafTree, message) -> LomosProof:
    """Online proof for ``message``; consumes ``len(bits) + 1`` leaves of ``tree``."""
    bits = as_bits(message)
    count = len(bits) + 1
    start = tree.next_free_leaf
    if count > tree.leaf_count - start:
        raise TreeExhausted(f"need {count} leaves, {tree.leaf_count - start} left; run setup again")
    disc = tree.disclosures
    end = start + count - 1
    records = [r[b] for r, b in zip(disc[start:end], bits)]
    records.append(disc[end][SLOT_BREAK])
    nodes, L = tree.nodes, tree.leaf_count
    path = tuple(nodes[level_offset(L, lv) + i] for lv, i in auth_path_nodes(L, start, count))
    tree.next_free_leaf = start + count
    return LomosProof(start, tuple(records), path)


@dataclass(frozen=True)
class VerifyResult:
    accepted: bool
    reason: str = ""  # "" | "wrong-root" | "cursor-mismatch" | "position-mismatch"

    def __bool__(self):
        return self.accepted


def verify(state: VerifierState, message, proof: LomosProof) -> VerifyResult:
    """Recompute the root from the proof placed at the message's bit positions."""
    bits = as_bits(message)
    count = len(bits) + 1
    start = proof.start_leaf
    if start != state.cursor:
        return VerifyResult(False, "cursor-mismatch")
    L = state.leaf_count
    if len(proof.records) != count or start + count > L:
        return VerifyResult(False, "position-mismatch")
    sha = _sha256
    records = proof.records
    ts = [sha(r[0]).digest() for r in records]
    level = [sha(_LEAF_TAG + (t + a + b if s == 0 else a + t + b if s == 1 else a + b + t)).digest()
             for t, (_, a, b), s in zip(ts, records, bits + (SLOT_BREAK,))]

    path = proof.path
    pi = 0
    lo, hi, size = start, start + count, L
    try:
        while size > 1:
            if lo % 2:
                level.insert(0, path[pi]); pi += 1; lo -= 1
            if hi % 2:
                level.append(path[pi]); pi += 1; hi += 1
            level = [sha(_NODE_TAG + a + b).digest() for a, b in zip(level[0::2], level[1::2])]
            lo, hi, size = lo // 2, hi // 2, size // 2
    except IndexError:
        return VerifyResult(False, "position-mismatch")
    if pi != len(path):
        return VerifyResult(False, "position-mismatch")
    if not hmac.compare_digest(level[0], state.root):
        return VerifyResult(False, "wrong-root")
    state.cursor = start + count
    return VerifyResult(True)


# -- benchmark ----------------------------------------------------------------

@dataclass(frozen=True)
class BenchReport:
    message_bits: int
    leaf_count: int
    operations: int
    online_seconds: float
    ops_per_sec: float
    trees_built: int
    setup_seconds: float
    setup_seconds_per_tree: float
    target_ops_per_sec: float = THROUGHPUT_TARGET

    @property
    def meets_target(self) -> bool:
        return self.ops_per_sec >= self.target_ops_per_sec

    def as_dict(self) -> dict:
        return {
            "message_bits": self.message_bits,
            "leaf_count": self.leaf_count,
            "operations": self.operations,
            "online_seconds": self.online_seconds,
            "ops_per_sec": self.ops_per_sec,
            "trees_built": self.trees_built,
            "setup_seconds": self.setup_seconds,
            "setup_seconds_per_tree": self.setup_seconds_per_tree,
            "target_ops_per_sec": self.target_ops_per_sec,
            "meets_target": self.meets_target,
        }


def message_stream(message_bits: int, seed: int = 0):
    """Endless deterministic stream of ``message_bits``-bit messages (as bit tuples)."""
    rng = random.Random(seed)
    while True:
        v = rng.getrandbits(message_bits) if message_bits else 0
        yield tuple((v >> (message_bits - 1 - k)) & 1 for k in range(message_bits))


def bench_throughput(message_bits: int = 128, duration: float = 1.0, seed: int = 0,
                     leaf_count: int = 4096) -> BenchReport:
    """Wall-clock prove+verify rate; offline setup and VerifySetup are timed separately."""
    if leaf_count < message_bits + 1:
        raise ValueError("leaf_count too small for one message")
    sk, pk = keygen(seed)
    messages = message_stream(message_bits, seed)
    setup_time = online = 0.0
    trees = ops = 0
    tree = state = None
    clock = time.perf_counter
    while online < duration:
        if tree is None or remaining_capacity(tree) < message_bits + 1:
            t0 = clock()
            tree = setup(sk, leaf_count, seed=(seed, trees).__repr__())
            state = verify_setup(pk, tree.root, tree.root_signature, leaf_count)
            setup_time += clock() - t0
            trees += 1
        msg = next(messages)
        t0 = clock()
        proof = prove(tree, msg)
        ok = verify(state, msg, proof)
        online += clock() - t0
        if not ok:
            raise RuntimeError(f"benchmark round trip rejected: {ok.reason}")
        ops += 1
    return BenchReport(message_bits, leaf_count, ops, online, ops / online if online else 0.0,
                       trees, setup_time, setup_time / trees if trees else 0.0)
