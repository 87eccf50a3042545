import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsec import lomos
from gridsec.lomos import (CountingSigner, LomosProof, SetupRejected, TreeCommitment, TreeExhausted, as_bits,
                           auth_path_labels, keygen, prove, recompute_root, remaining_capacity, setup,
                           verify, verify_setup)

from oracles import lomos_root_oracle


def fresh(leaf_count=8, seed=0):
    sk, pk = keygen(seed)
    tree = setup(sk, leaf_count, seed=seed)
    return tree, verify_setup(pk, tree.root, tree.root_signature, leaf_count)


# -- keys and setup -------------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["ed25519", "ecdsa-p256"])
def test_keygen(scheme):
    sk1, pk1 = keygen(3, scheme)
    _, pk2 = keygen(3, scheme)
    _, pk3 = keygen(4, scheme)
    assert pk1 == pk2 and pk1 != pk3
    sig = sk1.sign(b"root")
    assert pk1.verify(b"root", sig) and not pk3.verify(b"root", sig)


def test_keygen_unknown_scheme():
    with pytest.raises(ValueError):
        keygen(0, "rsa")


def test_figure_tree_shape():
    tree, _ = fresh(8)
    assert len(tree.nonces) == 24 and len(tree.nodes) == 15
    assert tree.next_free_leaf == 0
    assert recompute_root(tree.nonce_digests) == tree.root
    small, _ = fresh(2)
    assert len(small.nonces) == 6 and len(small.nodes) == 3


@pytest.mark.parametrize("bad", [0, 1, 3, 6, 12])
def test_setup_rejects_leaf_count(bad):
    with pytest.raises(ValueError):
        setup(keygen(0)[0], bad)


def test_tree_invariants():
    tree, _ = fresh(16, seed=5)
    for n, t in zip(tree.nonces, tree.nonce_digests):
        assert hashlib.sha256(n).digest() == t
    for lv in range(1, 5):
        for i in range(16 >> lv):
            left, right = tree.node(lv - 1, 2 * i), tree.node(lv - 1, 2 * i + 1)
            assert tree.node(lv, i) == hashlib.sha256(b"\x01" + left + right).digest()


def test_verify_setup_rejections():
    tree, _ = fresh()
    _, pk = keygen(0)
    _, other = keygen(1)
    sig = bytearray(tree.root_signature)
    sig[0] ^= 1
    with pytest.raises(SetupRejected):
        verify_setup(pk, tree.root, bytes(sig), 8)
    with pytest.raises(SetupRejected):
        verify_setup(other, tree.root, tree.root_signature, 8)
    with pytest.raises(SetupRejected):
        verify_setup(pk, tree.root, tree.root_signature, 16)


def test_commitment_wire_format():
    tree, _ = fresh()
    blob = tree.commitment().to_bytes()
    assert blob[:32] == tree.root
    assert int.from_bytes(blob[32:36], "big") == 8
    assert TreeCommitment.from_bytes(blob) == tree.commitment()
    with pytest.raises(ValueError):
        TreeCommitment.from_bytes(blob[:-1])


# -- online phase -----------------------------------------------------------------------

def test_figure_vector():
    tree, state = fresh(8)
    proof = prove(tree, "010")
    revealed = [r.nonce for r in proof.records]
    assert revealed == [tree.nonces[i] for i in (0, 4, 6, 11)]
    assert auth_path_labels(8, 0, 4) == [13]
    assert proof.path == (tree.nodes[13],)
    assert verify(state, "010", proof)
    assert remaining_capacity(tree) == 4
    second = prove(tree, "1")
    assert second.start_leaf == 4


def test_empty_message_uses_break_only():
    tree, state = fresh()
    proof = prove(tree, "")
    assert len(proof.records) == 1 and proof.records[0].nonce == tree.nonces[2]
    assert verify(state, "", proof)
    assert remaining_capacity(tree) == 7


def test_exhaustion():
    tree, _ = fresh()
    prove(tree, "0101010")
    assert remaining_capacity(tree) == 0
    with pytest.raises(TreeExhausted):
        prove(tree, "")


def test_replay_rejected():
    tree, state = fresh()
    proof = prove(tree, "11")
    assert verify(state, "11", proof)
    assert verify(state, "11", proof).reason == "cursor-mismatch"


def test_verify_recomputes_setup_root():
    tree, state = fresh(64, seed=2)
    for msg in ("0", "1101", "", "0000000011111111"):
        proof = prove(tree, msg)
        bits = as_bits(msg)
        assert lomos_root_oracle(proof.records, proof.path, proof.start_leaf, bits, 64) == tree.root
        assert verify(state, msg, proof)


def test_round_trip_many_messages():
    rng = random.Random(7)
    sk, pk = keygen(7)
    tree = state = None
    for k in range(1000):
        bits = [rng.getrandbits(1) for _ in range(rng.randint(0, 40))]
        if tree is None or remaining_capacity(tree) < len(bits) + 1:
            tree = setup(sk, 256, seed=k)
            state = verify_setup(pk, tree.root, tree.root_signature, 256)
        proof = prove(tree, bits)
        assert verify(state, bits, LomosProof.from_bytes(proof.to_bytes()))


def _flip(b: bytes, bit: int) -> bytes:
    out = bytearray(b)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def _with_record(proof, k, rec):
    recs = list(proof.records)
    recs[k] = rec
    return LomosProof(proof.start_leaf, tuple(recs), proof.path)


def test_exhaustive_tampering_rejected():
    msg = "10110010"
    tree, _ = fresh(32, seed=11)
    prove(tree, "000")  # start mid-tree so the path has siblings on both sides
    proof = prove(tree, msg)
    base_state = lambda: lomos.VerifierState(tree.root, 32, None, proof.start_leaf)  # noqa: E731
    assert verify(base_state(), msg, proof)
    rng = random.Random(0)
    for i in range(len(msg)):
        flipped = msg[:i] + ("1" if msg[i] == "0" else "0") + msg[i + 1:]
        assert verify(base_state(), flipped, proof).reason == "wrong-root"
    for k, rec in enumerate(proof.records):
        fake = rec._replace(nonce=rng.randbytes(32))
        assert not verify(base_state(), msg, _with_record(proof, k, fake))
        for field_name in ("other_a", "other_b"):
            for bit in range(256):
                bad = rec._replace(**{field_name: _flip(getattr(rec, field_name), bit)})
                assert not verify(base_state(), msg, _with_record(proof, k, bad))
    assert len(proof.path) >= 2
    for j, digest in enumerate(proof.path):
        for bit in range(256):
            path = list(proof.path)
            path[j] = _flip(digest, bit)
            assert not verify(base_state(), msg, LomosProof(proof.start_leaf, proof.records, tuple(path)))


def test_structural_rejections():
    tree, state = fresh()
    proof = prove(tree, "01")
    short = LomosProof(0, proof.records[:-1], proof.path)
    assert verify(state, "01", short).reason == "position-mismatch"
    extra = LomosProof(0, proof.records, proof.path + (b"\x00" * 32,))
    assert verify(state, "01", extra).reason == "position-mismatch"
    assert state.cursor == 0


def test_nonce_hiding():
    tree, _ = fresh(32, seed=3)
    for msg in ("1", "0110", "111000111"):
        proof = prove(tree, msg)
        blob = proof.to_bytes()
        revealed = {r.nonce for r in proof.records}
        for n in tree.nonces:
            if n not in revealed:
                assert n not in blob
        assert len(blob) == 8 + 96 * len(proof.records) + 4 + 32 * len(proof.path)


def test_no_signature_calls_online():
    sk, _ = keygen(1)
    counter = CountingSigner(sk)
    tree = setup(counter, 64)
    state = verify_setup(counter, tree.root, tree.root_signature, 64)
    assert (counter.sign_calls, counter.verify_calls) == (1, 1)
    for msg in ("0", "10", "111", "0101"):
        assert verify(state, msg, prove(tree, msg))
    assert counter.calls == 2


def test_proof_parsing_errors():
    tree, _ = fresh()
    blob = prove(tree, "1").to_bytes()
    for bad in (blob[:-1], blob + b"\x00", blob[:5]):
        with pytest.raises(ValueError):
            LomosProof.from_bytes(bad)


def test_as_bits():
    assert as_bits(b"\x80\x01") == (1,) + (0,) * 14 + (1,)
    assert as_bits("010") == (0, 1, 0)
    with pytest.raises(ValueError):
        as_bits("012")
    with pytest.raises(ValueError):
        as_bits([0, 2])


@settings(max_examples=30, deadline=None)
@given(msgs=st.lists(st.binary(max_size=3), min_size=1, max_size=5))
def test_cursor_strictly_increases(msgs):
    tree, state = fresh(256, seed=1)
    last = state.cursor
    for m in msgs:
        assert verify(state, m, prove(tree, m))
        assert state.cursor > last
        last = state.cursor


# -- benchmark ------------------------------------------------------------------------------

def test_bench_report_fields():
    rep = lomos.bench_throughput(16, 0.05, seed=2, leaf_count=64)
    d = rep.as_dict()
    assert rep.ops_per_sec > 0 and rep.operations > 0
    assert rep.trees_built >= 1 and rep.setup_seconds > 0
    assert set(d) >= {"ops_per_sec", "setup_seconds", "online_seconds", "meets_target"}


def test_message_stream_deterministic():
    a, b = lomos.message_stream(128, 5), lomos.message_stream(128, 5)
    assert [next(a) for _ in range(5)] == [next(b) for _ in range(5)]
    assert len(next(a)) == 128
