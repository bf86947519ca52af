"""Acceptance suite: one test per top-level criterion.

Each test prints a single PASS/FAIL line (run with -s to see them) and
asserts the stated tolerance. Oracles are independent of the library code
under test: dense LU for the solver, element-multiset equality for the
codecs, hand-computed confusion matrices for the metrics.
"""

import time

import numpy as np

from irdrop.cli import main as cli_main
from irdrop.gradcheck import run_gradcheck
from irdrop.model import IrDropModel, ModelConfig
from irdrop.pointcloud import decode_pointcloud, encode_pointcloud
from irdrop.rasterize import (GridSpec, current_map, effective_distance_map,
                              resistance_map)
from irdrop.solver import solve_static, verify_kcl
from irdrop.spice import ElementKind, parse_netlist, write_netlist
from irdrop.synth import GenSpec, generate
from irdrop.train import (Sample, TrainConfig, evaluate, f1_score, mae,
                          preprocess, train)
from irdrop.rasterize import build_feature_stack

from conftest import random_netlist_text
from test_solver import dense_reference


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def solver_cases(count: int):
    """Deterministic pool of solvable grids, all well under 2000 nodes."""
    sides = (8, 12, 16, 20)
    pitch_sets = ((2, 4), (1, 2), (4, 4))
    for i in range(count):
        side = sides[i % len(sides)]
        pitches = pitch_sets[i % len(pitch_sets)]
        if any(side % p for p in pitches):
            pitches = (2, 4)
        yield generate(GenSpec(side_um=side, pitches_um=pitches,
                               sheet_res=(0.2, 0.1),
                               n_current_sources=5 + i % 10,
                               n_voltage_pads=1 + i % 3, seed=1000 + i))


def test_solver_oracle_equivalence():
    worst_v, worst_kcl, worst_t, max_nodes = 0.0, 0.0, 0.0, 0
    for nl in solver_cases(50):
        n_nodes = len(nl.node_index)
        assert n_nodes <= 2000
        max_nodes = max(max_nodes, n_nodes)
        t0 = time.perf_counter()
        sol = solve_static(nl)
        worst_t = max(worst_t, time.perf_counter() - t0)
        ref = dense_reference(nl)
        scale = np.abs(ref).max()
        worst_v = max(worst_v, np.abs(sol.voltages - ref).max() / scale)
        worst_kcl = max(worst_kcl, verify_kcl(nl, sol))
    ok = worst_v < 1e-8 and worst_kcl < 1e-8 and worst_t < 1.0
    report("solver oracle equivalence", ok,
           f"50 cases (max {max_nodes} nodes): rel voltage err {worst_v:.2e}, "
           f"KCL {worst_kcl:.2e} A, slowest solve {worst_t:.3f} s")


def test_analytic_solves():
    two = parse_netlist("V1 n1_m1_0_0 0 1.0\n"
                        "R1 n1_m1_0_0 n1_m1_1000_0 1.0\n"
                        "I1 n1_m1_1000_0 0 0.1\n")
    sol2 = solve_static(two)
    err2 = abs(sol2.ir_drop[two.node_index[two.elements[2].a]] - 0.1)

    chain = parse_netlist("V1 n1_m1_0_0 0 1.0\n"
                          "R1 n1_m1_0_0 n1_m1_1000_0 0.5\n"
                          "R2 n1_m1_1000_0 n1_m1_2000_0 0.5\n"
                          "I1 n1_m1_2000_0 0 0.1\n")
    sol3 = solve_static(chain)
    err3 = abs(sol3.ir_drop[chain.node_index[chain.elements[3].a]] - 0.1)
    # mid node sees only the first resistor: drop 0.05 V
    mid = chain.node_index[chain.elements[1].b]
    err_mid = abs(sol3.ir_drop[mid] - 0.05)
    ok = err2 < 1e-12 and err3 < 1e-12 and err_mid < 1e-12
    report("analytic solves", ok,
           f"2-node err {err2:.1e} V, chain end err {err3:.1e} V, "
           f"chain mid err {err_mid:.1e} V")


def test_superposition():
    worst = 0.0
    for i in range(10):
        nl = generate(GenSpec(side_um=12, pitches_um=(2, 4),
                              sheet_res=(0.2, 0.1), n_current_sources=6,
                              seed=2000 + i))
        base = solve_static(nl).ir_drop
        scaled_text = "\n".join(
            f"{e.name} {e.a.name()} {e.b.name()} "
            f"{(e.value * 3.0 if e.kind is ElementKind.CURRENT_SOURCE else e.value)!r}"
            for e in nl.elements)
        tripled = solve_static(parse_netlist(scaled_text + "\n")).ir_drop
        denom = max(np.abs(3.0 * base).max(), 1e-30)
        worst = max(worst, np.abs(tripled - 3.0 * base).max() / denom)
    ok = worst < 1e-8
    report("superposition", ok,
           f"10 cases, currents x3: max rel deviation {worst:.2e}")


def canonical_multiset(nl):
    return sorted((e.kind.value, e.a, e.b, e.value) for e in nl.elements)


def test_roundtrip_losslessness():
    rng = np.random.default_rng(3)
    failures = 0
    for _ in range(100):
        nl = parse_netlist(random_netlist_text(rng, int(rng.integers(2, 80))))
        want = canonical_multiset(nl)
        if canonical_multiset(parse_netlist(write_netlist(nl))) != want:
            failures += 1
        if canonical_multiset(decode_pointcloud(encode_pointcloud(nl))) != want:
            failures += 1

    big = generate(GenSpec(side_um=280, pitches_um=(1, 2),
                           sheet_res=(0.2, 0.1), n_current_sources=100,
                           n_voltage_pads=4, seed=0))
    n_big = len(big.elements)
    t0 = time.perf_counter()
    reparsed = parse_netlist(write_netlist(big))
    decoded = decode_pointcloud(encode_pointcloud(big))
    big_time = time.perf_counter() - t0
    want = canonical_multiset(big)
    big_ok = (canonical_multiset(reparsed) == want
              and canonical_multiset(decoded) == want)
    ok = failures == 0 and big_ok and n_big >= 100_000 and big_time < 10.0
    report("parser/point-cloud losslessness", ok,
           f"100 random netlists, 0 mismatches expected (got {failures}); "
           f"{n_big}-element case round-tripped in {big_time:.2f} s")


def test_feature_map_conservation():
    worst = 0.0
    for nl in solver_cases(10):
        spec = GridSpec.from_netlist(nl)
        i_total = sum(e.value for e in nl.elements_of(ElementKind.CURRENT_SOURCE))
        r_total = sum(e.value for e in nl.elements_of(ElementKind.RESISTOR))
        worst = max(worst,
                    abs(current_map(nl, spec).sum() - i_total) / i_total,
                    abs(resistance_map(nl, spec).sum() - r_total) / r_total)

    spec = GridSpec(cell_pitch=1000, width_cells=10, height_cells=10,
                    origin=(0, 0))
    hand = [
        # one source 5 um from the cell (0,0) center -> 5.0
        ("V1 n1_m1_5500_500 0 1.0\n", 5.0),
        # two sources at 2 um each (different layers, same x/y) -> 1.0
        ("V1 n1_m1_2500_500 0 1.0\nV2 n1_m2_2500_500 0 1.0\n", 1.0),
        # sources at 1 um and 3 um -> 1/(1/1 + 1/3) = 0.75
        ("V1 n1_m1_1500_500 0 1.0\nV2 n1_m2_3500_500 0 1.0\n", 0.75),
    ]
    worst_hand = 0.0
    for text, expected in hand:
        got = effective_distance_map(parse_netlist(text), spec)[0, 0]
        worst_hand = max(worst_hand, abs(got - expected))
    ok = worst < 1e-9 and worst_hand < 1e-12
    report("feature-map conservation", ok,
           f"channel sum rel err {worst:.2e}; effective-distance hand cases "
           f"(5.0, 1.0, 0.75 um) err {worst_hand:.2e}")


def test_gradient_checks():
    t0 = time.perf_counter()
    results = run_gradcheck(seed=0)
    elapsed = time.perf_counter() - t0
    worst_name, worst = max(results.items(), key=lambda kv: kv[1])
    ok = worst < 1e-4 and elapsed < 60.0
    report("gradient checks", ok,
           f"{len(results)} checks, worst {worst_name} = {worst:.2e}, "
           f"{elapsed:.1f} s")


def test_metric_correctness():
    truth = np.array([[1.0, 1.0], [0.0, 0.0]])
    exact = (f1_score(truth, truth) == 1.0,
             f1_score(np.array([[0.0, 0.0], [1.0, 1.0]]), truth) == 0.0,
             # tp=1, fp=1, fn=1 -> precision = recall = F1 = 0.5
             f1_score(np.array([[1.0, 0.0], [1.0, 0.0]]), truth) == 0.5,
             mae(np.full((4, 4), 1e-4), np.zeros((4, 4))) == 1e-4)

    rng = np.random.default_rng(4)
    invariant = True
    for _ in range(100):
        t = rng.uniform(size=(12, 12))
        p = t + rng.normal(0, 0.05, size=t.shape)
        base = f1_score(p, t)
        k = float(rng.uniform(1e-4, 1e4))
        invariant &= f1_score(k * p, k * t) == base
    ok = all(exact) and invariant
    report("metric correctness", ok,
           f"hand cases (1.0, 0.0, 0.5, MAE 1e-4) exact: {all(exact)}; "
           f"scale invariance on 100 pairs: {invariant}")


def overfit_samples():
    samples = []
    for i in range(4):
        nl = generate(GenSpec(side_um=24, pitches_um=(2, 4),
                              sheet_res=(0.2, 0.1), n_current_sources=15,
                              n_voltage_pads=2, seed=i))
        sol = solve_static(nl)
        samples.append(Sample(case_id=f"c{i}",
                              stack=build_feature_stack(nl, sol),
                              cloud=encode_pointcloud(nl)))
    return samples


OVERFIT_MODEL = ModelConfig(base_channels=8, lnt_embed_dim=32, lnt_layers=2,
                            lnt_heads=4, pool_grid=8, out_side=32)


def test_overfit_integration():
    t0 = time.perf_counter()
    samples = overfit_samples()
    model = IrDropModel(OVERFIT_MODEL, seed=0)
    cfg = TrainConfig(batch_size=2, stage1_steps=50, stage2_steps=500,
                      seed=0, max_points=512)
    result = train(samples, model, cfg)
    rep = evaluate(model, samples, result.stats, max_points=512)
    elapsed = time.perf_counter() - t0
    ratio = result.stage2_losses[-1] / result.stage2_losses[0]
    ok = ratio <= 0.05 and rep.avg_f1 >= 0.7 and elapsed < 900.0
    report("overfit integration", ok,
           f"4 cases, 50+500 steps: final/initial MSE {ratio:.2e}, "
           f"train F1 {rep.avg_f1:.3f}, {elapsed:.0f} s")


def test_ablation_harness(tmp_path):
    data = tmp_path / "data"
    assert cli_main(["gen", "--out", str(data), "--cases", "4",
                     "--side-um", "16", "--pitches", "2,4"]) == 0
    flags = ["--base-channels", "4", "--lnt-embed-dim", "8",
             "--lnt-layers", "1", "--lnt-heads", "2", "--pool-grid", "4",
             "--out-side", "32", "--stage1-steps", "2", "--stage2-steps", "5",
             "--max-points", "128"]
    rows = []
    for name in ("EC", "W-Att", "W-LNT", "W-Aug", "United"):
        run = tmp_path / name
        code = cli_main(["train", "--manifest", str(data / "manifest.csv"),
                         "--out-dir", str(run), "--ablation", name, *flags])
        code |= cli_main(["eval", "--manifest", str(data / "manifest.csv"),
                          "--checkpoint", str(run / "checkpoint.bin"),
                          "--out-dir", str(run / "rep"), "--label", name,
                          "--max-points", "128"])
        assert code == 0, name
        table = (run / "rep" / "report.csv").read_text().strip().split("\n")
        rows.append(table[-1])  # the avg row, labeled with the config
    labels = [r.split(",")[-1] for r in rows]
    ok = labels == ["EC", "W-Att", "W-LNT", "W-Aug", "United"]
    report("ablation harness", ok,
           f"5 configurations trained and evaluated; avg rows: {labels}")


def test_determinism(tmp_path):
    flags = ["--base-channels", "4", "--lnt-embed-dim", "8",
             "--lnt-layers", "1", "--lnt-heads", "2", "--pool-grid", "4",
             "--out-side", "32", "--stage1-steps", "1", "--stage2-steps", "3",
             "--max-points", "128", "--seed", "7"]
    outputs = []
    for run in ("a", "b"):
        root = tmp_path / run
        data = root / "data"
        assert cli_main(["gen", "--out", str(data), "--cases", "2",
                         "--side-um", "12", "--pitches", "2,4",
                         "--seed", "7"]) == 0
        assert cli_main(["solve", "--netlist", str(data / "case000.sp"),
                         "--out", str(root / "nodes.csv")]) == 0
        assert cli_main(["featurize", "--netlist", str(data / "case000.sp"),
                         "--out-dir", str(root / "feat")]) == 0
        assert cli_main(["train", "--manifest", str(data / "manifest.csv"),
                         "--out-dir", str(root / "run"), *flags]) == 0
        assert cli_main(["eval", "--manifest", str(data / "manifest.csv"),
                         "--checkpoint", str(root / "run" / "checkpoint.bin"),
                         "--out-dir", str(root / "rep"), "--deterministic",
                         "--max-points", "128", "--seed", "7"]) == 0
        files = {}
        for p in sorted(root.rglob("*")):
            if p.is_file() and p.suffix in (".sp", ".csv", ".bin", ".txt"):
                rel = p.relative_to(root)
                if rel.name == "report_timing.csv":
                    continue  # wall-clock column, excluded by design
                files[str(rel)] = p.read_bytes()
        outputs.append(files)
    same_names = set(outputs[0]) == set(outputs[1])
    diffs = [k for k in outputs[0]
             if same_names and outputs[0][k] != outputs[1][k]]
    ok = same_names and not diffs
    report("determinism", ok,
           f"{len(outputs[0])} artifacts compared byte-for-byte; "
           f"mismatches: {diffs if diffs else 'none'}")
