"""Acceptance criteria 1-11, each reported as one PASS/FAIL line at the end of the run."""

import random
import time
import warnings

import numpy as np
import pytest
from scipy.stats import spearmanr

from gridsec import lomos
from gridsec._rng import substream
from gridsec.estimator import ResidualTester, chi2_threshold, wls_estimate
from gridsec.fdi import gross_attack, random_stealthy_attack
from gridsec.gridcore import (InfeasibleError, MeasurementSet, build_measurement_matrix, bundled_case, dc_opf)
from gridsec.mtd import (composite_rank, detection_probability, evaluate_detection, identity_plan,
                         is_complete_mtd, operating_state, tradeoff_curve)
from gridsec.netsim import bundled_scenario, bundled_scenarios, run

from conftest import CRITERIA, random_connected_case, random_dispatch_case
from oracles import chi2_quantile_oracle, lomos_root_oracle, lp_vertex_oracle, wls_oracle

P = 0.95


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    CRITERIA.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def model5():
    case = bundled_case("case5")
    ms = MeasurementSet.all_flows_and_injections(case, 0.01)
    H = build_measurement_matrix(case, ms)
    return case, ms, H, ms.sigmas, H @ operating_state(case)


@pytest.fixture(scope="module")
def clean_rate(model5):
    """Flag rate of 10,000 noisy clean measurement vectors and the time it took."""
    _, _, H, sig, z0 = model5
    t0 = time.perf_counter()
    rng = np.random.default_rng(substream(2024, "acceptance", "clean"))
    Z = z0 + sig * rng.standard_normal((10_000, len(z0)))
    rate = float(np.mean(ResidualTester(H, sig, P).flags(Z)))
    return rate, time.perf_counter() - t0


def test_criterion_01_bdd_calibration(clean_rate):
    rate, elapsed = clean_rate
    report(1, abs(rate - (1 - P)) <= 0.01 and elapsed < 30.0,
           f"false-alarm rate {rate:.4f} over 10000 trials (target 0.05 +/- 0.01), {elapsed:.2f} s")


def test_criterion_02_stealth_invariance(model5, clean_rate):
    _, _, H, sig, z0 = model5
    tester = ResidualTester(H, sig, P)
    J0 = tester.J(z0[None, :])[0]
    worst = 0.0
    rng = np.random.default_rng(substream(2024, "acceptance", "stealth-noise"))
    Z = np.empty((1000, len(z0)))
    for t in range(1000):
        a = random_stealthy_attack(H, 0.05, substream(2024, "acceptance", "stealth", t)).a
        worst = max(worst, abs(tester.J((z0 + a)[None, :])[0] - J0))
        Z[t] = z0 + a + sig * rng.standard_normal(len(z0))
    noisy = float(np.mean(tester.flags(Z)))
    base = clean_rate[0]
    report(2, worst <= 1e-8 and abs(noisy - base) <= 0.02,
           f"max |dJ| {worst:.2e} (<= 1e-8); attacked rate {noisy:.4f} vs clean {base:.4f} (+/- 0.02)")


def test_criterion_03_gross_error_detection(model5):
    _, _, H, sig, z0 = model5
    m = len(z0)
    tester = ResidualTester(H, sig, P)
    rng = np.random.default_rng(substream(2024, "acceptance", "gross"))
    Z = np.empty((1000, m))
    for t in range(1000):
        i = int(rng.integers(m))
        a = gross_attack(m, [i], [float(rng.choice([-1.0, 1.0])) * 10.0 * sig[i]]).a
        Z[t] = z0 + a + sig * rng.standard_normal(m)
    rate = float(np.mean(tester.flags(Z)))
    report(3, rate >= 0.99, f"single 10-sigma injections detected in {rate:.3f} of 1000 trials (>= 0.99)")


def test_criterion_04_complete_mtd(model5):
    rng = np.random.default_rng(substream(2024, "acceptance", "complete"))
    Q, _ = np.linalg.qr(rng.normal(size=(10, 10)))
    H, H2 = Q[:, :4] * 5.0, Q[:, 4:8] * 3.0  # m = 10 >= 2n = 8
    complete = is_complete_mtd(H, H2)
    rank = composite_rank(H, H2)
    prob, _ = detection_probability(H, H2, 0.01, 1.0, noise_sigma=0.0, trials=1000, seed=4)

    case, ms, Hc, sig, _ = model5
    noiseless = evaluate_detection(case, ms, identity_plan(case), 0.05, noise_sigma=0.0, trials=1000, seed=5)
    noisy = evaluate_detection(case, ms, identity_plan(case), 0.05, trials=1000, seed=5)
    # the clean stream on the very same noise draws
    z0 = Hc @ operating_state(case)
    Z = np.array([z0 + np.random.default_rng(substream(5, "noise", t)).standard_normal(len(z0)) * sig
                  for t in range(1000)])
    baseline = float(np.mean(ResidualTester(Hc, sig, P).flags(Z)))
    ok = (bool(complete) and rank == 8 and prob == 1.0 and noiseless.spa == 0.0
          and noiseless.detection_probability == 0.0 and noisy.detection_probability == baseline)
    report(4, ok, f"composite rank {rank}/8, noiseless detection {prob:.3f}; identity SPA {noiseless.spa}, "
                  f"detection {noisy.detection_probability:.3f} vs clean baseline {baseline:.3f}")


def test_criterion_05_tradeoff_trend(model5):
    case, ms, _, _, _ = model5
    rows = tradeoff_curve(case, ms, [0.0, 0.05, 0.1, 0.15, 0.2], trials=500, seed=0)
    spas = [r.spa for r in rows]
    det = [r.detection_probability for r in rows]
    rho = spearmanr(spas, det)[0]
    ok = all(b >= a for a, b in zip(spas, spas[1:])) and rho >= 0.8 and rows[0].cost_delta == 0.0
    report(5, ok, "SPA " + ",".join(f"{s:.4g}" for s in spas) + " detection " + ",".join(f"{d:.3f}" for d in det)
           + f"; Spearman {rho:.3f} (>= 0.8); cost_delta(0) = {rows[0].cost_delta}")


def _flip(b: bytes, bit: int) -> bytes:
    out = bytearray(b)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def test_criterion_06_lomos_correctness():
    notes, ok = [], True
    # round trips, with the root independently recomputed from each proof
    rng = random.Random(2024)
    sk, pk = lomos.keygen(2024)
    tree = state = None
    accepted = 0
    for k in range(1000):
        bits = [rng.getrandbits(1) for _ in range(rng.randint(0, 32))]
        if tree is None or lomos.remaining_capacity(tree) < len(bits) + 1:
            tree = lomos.setup(sk, 256, seed=k)
            state = lomos.verify_setup(pk, tree.root, tree.root_signature, 256)
        proof = lomos.prove(tree, bits)
        good = lomos.verify(state, bits, proof) and \
            lomos_root_oracle(proof.records, proof.path, proof.start_leaf, bits, 256) == tree.root
        accepted += bool(good)
    ok &= accepted == 1000
    notes.append(f"{accepted}/1000 round trips")

    # exhaustive tampering of one 8-bit message
    tree = lomos.setup(sk, 32, seed="tamper")
    lomos.prove(tree, "000")
    msg = "10110010"
    proof = lomos.prove(tree, msg)
    fresh = lambda: lomos.VerifierState(tree.root, 32, None, proof.start_leaf)  # noqa: E731
    tampered = rejected = 0

    def check(m, p):
        nonlocal tampered, rejected
        tampered += 1
        rejected += not lomos.verify(fresh(), m, p)

    for i in range(8):
        check(msg[:i] + ("1" if msg[i] == "0" else "0") + msg[i + 1:], proof)
    for k, rec in enumerate(proof.records):
        recs = list(proof.records)
        recs[k] = rec._replace(nonce=bytes(32))
        check(msg, lomos.LomosProof(proof.start_leaf, tuple(recs), proof.path))
        leaf = proof.start_leaf + k
        for alt in tree.nonces[3 * leaf: 3 * leaf + 3]:  # the leaf's genuine nonces for other slots
            if alt != rec.nonce:
                recs = list(proof.records)
                recs[k] = rec._replace(nonce=alt)
                check(msg, lomos.LomosProof(proof.start_leaf, tuple(recs), proof.path))
        for name in ("other_a", "other_b"):
            for bit in range(256):
                recs = list(proof.records)
                recs[k] = rec._replace(**{name: _flip(getattr(rec, name), bit)})
                check(msg, lomos.LomosProof(proof.start_leaf, tuple(recs), proof.path))
    for j, digest in enumerate(proof.path):
        for bit in range(256):
            path = list(proof.path)
            path[j] = _flip(digest, bit)
            check(msg, lomos.LomosProof(proof.start_leaf, proof.records, tuple(path)))
    ok &= rejected == tampered
    notes.append(f"{rejected}/{tampered} tampered proofs rejected")

    # the 24-nonce worked example
    tree = lomos.setup(sk, 8, seed="figure")
    fstate = lomos.verify_setup(pk, tree.root, tree.root_signature, 8)
    proof = lomos.prove(tree, "010")
    revealed = [tree.nonces.index(r.nonce) for r in proof.records]
    labels = lomos.auth_path_labels(8, 0, 4)
    fig_ok = revealed == [0, 4, 6, 11] and labels == [13] and proof.path == (tree.nodes[13],) \
        and bool(lomos.verify(fstate, "010", proof))
    ok &= fig_ok
    notes.append(f"message 010 reveals n{', n'.join(map(str, revealed))} with path h{labels}")

    # signatures are used once per tree, never online
    counter = lomos.CountingSigner(sk)
    tree = lomos.setup(counter, 64, seed="count")
    cstate = lomos.verify_setup(counter, tree.root, tree.root_signature, 64)
    offline = counter.calls
    for m in ("0", "10", "111", "01010", "1100"):
        lomos.verify(cstate, m, lomos.prove(tree, m))
    online_calls = counter.calls - offline
    ok &= online_calls == 0
    notes.append(f"{online_calls} signature calls online")
    report(6, bool(ok), "; ".join(notes))


def test_criterion_07_lomos_throughput():
    rep = lomos.bench_throughput(128, duration=1.0, seed=0)
    detail = (f"{rep.ops_per_sec:.0f} prove+verify ops/s for 128-bit messages ({rep.operations} ops in "
              f"{rep.online_seconds:.2f} s online); offline setup {rep.setup_seconds_per_tree * 1e3:.1f} ms per "
              f"{rep.leaf_count}-leaf tree, reported separately")
    if not rep.meets_target:
        detail += f"; conformance warning: below the {rep.target_ops_per_sec:.0f} ops/s target"
        warnings.warn(f"LoMoS throughput {rep.ops_per_sec:.0f} ops/s is below the "
                      f"{rep.target_ops_per_sec:.0f} ops/s conformance target", UserWarning)
    ok = rep.operations > 0 and rep.setup_seconds > 0 and rep.online_seconds > 0
    report(7, ok, detail)


def test_criterion_08_chi2_quantile():
    worst, where = 0.0, None
    for dof in range(1, 51):
        for p in (0.9, 0.95, 0.99):
            err = abs(chi2_threshold(dof, p) / chi2_quantile_oracle(dof, p) - 1)
            if err > worst:
                worst, where = err, (dof, p)
    report(8, worst < 1e-6, f"max relative error {worst:.2e} at dof={where[0]}, p={where[1]} (< 1e-6)")


def test_criterion_09_case_studies():
    coupler = bundled_scenario("fdi-buscoupler")
    benign = run(coupler.strip_attacks())
    attacked = run(coupler)
    mitm = bundled_scenario("mitm")
    ids_on = run(mitm.with_defense(ids=True, bitw=False))
    bitw_on = run(mitm.with_defense(ids=False, bitw=True))
    bare = run(mitm.with_defense(ids=False, bitw=False))
    checks = {
        "no-attack coupler closed": benign.outcome["breakers"]["CB_C"] == "closed",
        "no-attack all 5 loads energized": benign.outcome["deenergized_loads"] == []
        and len(benign.trace[-1].energized) == 5,
        "FDI de-energizes exactly loads 0,1": attacked.outcome["deenergized_loads"] == ["0", "1"],
        "redirect with IDS raises address alarm": ids_on.levels()["address"] > 0,
        "tampered frames dropped with BITW": bitw_on.outcome["frames_dropped"] > 0
        and bitw_on.outcome["false_scada_values"] == 0,
        "false SCADA value with both off": any(v == 2.4 for _, _, pt, v in bare.scada_view if pt == "flow_L2"),
    }
    failed = [k for k, v in checks.items() if not v]
    report(9, not failed, "; ".join(checks) if not failed else "failed: " + "; ".join(failed))


def test_criterion_10_determinism():
    names = bundled_scenarios()
    stable = {name: len({run(bundled_scenario(name)).log_hash for _ in range(3)}) == 1 for name in names}
    golden = run(bundled_scenario("golden-benign"))
    ok = all(stable.values()) and len(golden.alarms) == 0
    report(10, ok, f"{sum(stable.values())}/{len(names)} scenarios hash-stable over 3 runs; "
                   f"golden benign alarms {len(golden.alarms)}")


def test_criterion_11_oracle_equivalence():
    rng = np.random.default_rng(substream(2024, "acceptance", "wls"))
    wls_worst = 0.0
    for _ in range(50):
        case = random_connected_case(rng, int(rng.integers(3, 10)))
        ms = MeasurementSet.all_flows_and_injections(case)
        H = build_measurement_matrix(case, ms)
        sig = rng.uniform(0.005, 0.05, size=len(ms))
        z = H @ rng.normal(scale=0.1, size=case.n_states) + sig * rng.normal(size=len(ms))
        x_ref, _ = wls_oracle(H, z, sig)
        wls_worst = max(wls_worst, float(np.max(np.abs(wls_estimate(H, z, sig).x_hat - x_ref))))

    opf_worst, solved, infeasible_agree = 0.0, 0, True
    cases = [bundled_case("ring3"), bundled_case("case5")]
    cases += [random_dispatch_case(np.random.default_rng(substream(2024, "acceptance", "opf", k)), 1 + k % 3)
              for k in range(60)]
    for case in cases:
        expected = lp_vertex_oracle(case)
        if expected is None:
            try:
                dc_opf(case)
                infeasible_agree = False
            except InfeasibleError:
                pass
            continue
        res = dc_opf(case)
        solved += 1
        opf_worst = max(opf_worst, abs(res.cost - expected[0]))
    ok = wls_worst <= 1e-10 and opf_worst <= 1e-8 and infeasible_agree and solved >= 20
    report(11, ok, f"WLS max deviation {wls_worst:.1e} over 50 instances (<= 1e-10); OPF max cost deviation "
                   f"{opf_worst:.1e} over {solved} feasible cases with <= 3 generators (<= 1e-8)")

