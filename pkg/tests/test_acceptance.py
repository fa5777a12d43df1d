"""Acceptance gate: one test per shipping criterion, run in order.

Each test asserts its pinned tolerances and wall-clock budget, then prints a
single ``criterion N: PASS`` line with the measured numbers, so

    pytest tests/test_acceptance.py -v -rA

reads as a checklist.  Criterion 8 trains the tiny preset twice (once for the
learning bars, once for the bit-exact replay) and dominates the runtime at
roughly thirteen minutes on one CPU; everything else finishes in seconds.
"""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from rsnlab.analysis import block_rf_row, cost_of_network, graph_to_symbolic, rf_propagate
from rsnlab.arch.blocks import prm_graph, rsb_graph
from rsnlab.arch.calibrate import match_variant_flops
from rsnlab.arch.config import FUSION_MODES, RSBConfig, load_network_config
from rsnlab.arch.network import build_network
from rsnlab.cli import gradcheck_cases
from rsnlab.codec import HeatmapStack, decode
from rsnlab.data import AugmentConfig, PoseAnnotation, SynthDataset
from rsnlab.metrics import PosePrediction, average_precision
from rsnlab.train import TrainConfig, train

from oracles import rsb_unrolled_b4
from test_codec import IDENTITY, blur_reference, subpixel_gaussian
from test_metrics import kps, make_ap_case, oracle_ap_values

RSN_ROW = ["3", "5,7", "7,9,11", "9,11,13,15"]

RF_TABLE = {
    "resnet": ["3", "3", "3", "3"],
    "osnet": ["3", "5", "7", "9"],
    "res2net": ["1", "3", "3,5", "3,5,7"],
    "rsn": RSN_ROW,
}

COST_TARGETS = (
    # preset, params target, MACs target, params tol, MACs tol
    ("rsn18", 12.5e6, 2.5e9, 0.10, 0.15),
    ("rsn50", 25.7e6, 6.4e9, 0.10, 0.15),
    ("rsn50x4", 111.8e6, 29.3e9, 0.15, 0.15),
)


def report(n: int, detail: str) -> None:
    print(f"criterion {n}: PASS ({detail})")


def randomize(g, rng, scale=0.5):
    """He init leaves biases at zero; give every parameter a random value."""
    for p in g.params.values():
        p.data = rng.normal(0.0, scale, size=p.shape).astype(g.dtype)


def test_criterion_1_receptive_field_rows_for_all_four_block_families():
    start = time.monotonic()
    got = {block: [str(rf) for rf in block_rf_row(block)] for block in RF_TABLE}
    elapsed = time.monotonic() - start
    assert got == RF_TABLE
    assert elapsed < 1.0
    report(1, f"16/16 receptive-field cells exact in {elapsed * 1e3:.0f} ms")


def test_criterion_2_calibrated_presets_hit_cost_targets():
    lines = []
    for name, params_target, macs_target, params_tol, macs_tol in COST_TARGETS:
        rep = cost_of_network(load_network_config(name))
        params_err = rep.params / params_target - 1.0
        macs_err = rep.macs / macs_target - 1.0
        assert abs(params_err) <= params_tol, f"{name} params deviate {params_err:+.2%}"
        assert abs(macs_err) <= macs_tol, f"{name} MACs deviate {macs_err:+.2%}"
        lines.append(f"{name} params {rep.params:,} [{params_err:+.2%}, tol {params_tol:.0%}]"
                     f" macs {rep.macs:,} [{macs_err:+.2%}, tol {macs_tol:.0%}]")
    lines.append("convention: 1 MAC = 1 FLOP, elementwise/pool/resize not counted")
    report(2, "; ".join(lines))


def test_criterion_3_finite_difference_gradients_across_the_engine():
    start = time.monotonic()
    results = gradcheck_cases(shapes=20, include_blocks=True)
    elapsed = time.monotonic() - start
    names = {name for name, _ in results}
    combos = {f"rsb_b{b}_{mode}" for b in range(2, 7) for mode in FUSION_MODES}
    assert combos | {"prm"} <= names
    assert len(names - combos - {"prm"}) == 19  # one case per primitive
    worst = max(err for _, err in results)
    assert worst <= 1e-4
    assert elapsed < 300.0
    report(3, f"{len(results)} cases at 20 shapes each, worst rel err {worst:.2e}, "
              f"{elapsed:.1f} s")


def test_criterion_4_four_branch_block_matches_unrolled_reference():
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(50):
        width = int(rng.integers(1, 5))
        ci = 4 * int(rng.integers(1, 4))
        co = ci if rng.random() < 0.5 else 2 * ci
        cfg = RSBConfig(in_channels=ci, out_channels=co, branch_width=width,
                        branches=4, batchnorm=False)
        g = rsb_graph(cfg, seed=trial).astype(np.float64)
        randomize(g, np.random.default_rng(trial + 1000))
        x = rng.normal(size=(2, ci, 8, 8))
        got = g.forward(x)[0].data
        want = rsb_unrolled_b4(g.params, x)
        worst = max(worst, float(np.max(np.abs(got - want))))
        sg = graph_to_symbolic(g)
        rf = rf_propagate(sg)
        assert [str(rf[sg.labels[f"rsb.y{i}"]]) for i in range(1, 5)] == RSN_ROW
    assert worst <= 1e-6
    report(4, f"50 four-branch configs within {worst:.2e} of the ten-convolution "
              f"unrolled reference; every instance's symbolic row is "
              f"{' | '.join(RSN_ROW)}")


def test_criterion_5_attention_gain_strictly_inside_one_to_two():
    rng = np.random.default_rng(23)
    lo, hi = np.inf, -np.inf
    positions = 0
    for trial in range(100):
        channels = int(rng.integers(2, 7))
        g = prm_graph(channels, seed=trial, batchnorm=False).astype(np.float64)
        randomize(g, np.random.default_rng(trial + 500), scale=0.3)
        x = rng.normal(size=(2, channels, 5, 5))
        vals = g.run(x)
        kx = vals[g.labels["prm.kx"]].data
        out = vals[g.labels["prm.out"]].data
        live = kx != 0.0
        assert live.any()
        ratio = out[live] / kx[live]
        assert np.all((ratio > 1.0) & (ratio < 2.0))
        lo, hi = min(lo, float(ratio.min())), max(hi, float(ratio.max()))
        positions += int(live.sum())
    report(5, f"gain within (1, 2) at all {positions} live positions over 100 "
              f"random inputs; observed range [{lo:.4f}, {hi:.4f}]")


def test_criterion_6_quarter_offset_beats_argmax_on_random_gaussians():
    rng = np.random.default_rng(29)
    h, w, sigma = 24, 24, 2.0
    refined, coarse = [], []
    for _ in range(1000):
        cx = rng.uniform(4, w - 5)
        cy = rng.uniform(4, h - 5)
        maps = subpixel_gaussian(h, w, cx, cy, sigma)[None]
        decoded = decode(HeatmapStack(maps, IDENTITY))
        refined.append(np.hypot(decoded.xy[0, 0] - cx, decoded.xy[0, 1] - cy))
        blurred = blur_reference(maps[0])
        iy, ix = np.unravel_index(blurred.argmax(), blurred.shape)
        coarse.append(np.hypot(ix - cx, iy - cy))
    refined_mean = float(np.mean(refined))
    coarse_mean = float(np.mean(coarse))
    assert refined_mean <= 0.5
    assert refined_mean < coarse_mean
    report(6, f"1000 Gaussians with uniform subpixel centers: quarter-offset mean "
              f"error {refined_mean:.3f} px vs argmax-only {coarse_mean:.3f} px")


def test_criterion_7_greedy_matching_equals_exhaustive_oracle():
    cases = 0
    for seed in range(220):
        rng = np.random.default_rng(seed + 5000)
        preds, gts, k = make_ap_case(rng)
        rep = average_precision(preds, gts, k)
        want = oracle_ap_values(preds, gts, k)
        for (label, value), expected in zip(rep.components, want):
            assert value == expected, f"seed {seed + 5000} {label}: {value} != {expected}"
        cases += 1
    rng = np.random.default_rng(77)
    gts = [PoseAnnotation(kps(rng.uniform(50, 400, size=(5, 2))), area=8000.0,
                          image_id=i % 2, id=i) for i in range(4)]
    preds = [PosePrediction(g.keypoints, score=1.0, image_id=g.image_id, id=g.id)
             for g in gts]
    rep = average_precision(preds, gts, np.full(5, 0.1))
    assert all(value == 1.0 for _, value in rep.components)
    report(7, f"{cases} random cases bit-identical to the exhaustive matcher at "
              f"every threshold; predictions equal to ground truth score AP 1.0")


def _desk_training_run():
    cfg = load_network_config("rsn-tiny")
    dataset = SynthDataset(seed=7, count=32, canvas=(96, 96))
    neutral = AugmentConfig(input_size=(cfg.input_h, cfg.input_w), rotation=0.0,
                            scale_range=(1.0, 1.0), flip_prob=0.0)
    schedule = TrainConfig(epochs=10, steps_per_epoch=300, batch_size=8,
                           base_lr=5e-3, seed=7)
    graph = build_network(cfg, seed=7)
    start = time.monotonic()
    result = train(graph, cfg, dataset, schedule, augment_cfg=neutral)
    return result, time.monotonic() - start


def test_criterion_8_desk_training_learns_and_replays_bit_exactly():
    first, first_time = _desk_training_run()
    assert first_time < 900.0
    ratio = first.final_loss / first.initial_loss
    assert ratio < 0.10
    pck = first.epochs[-1]["pck"]
    assert pck >= 0.9
    second, second_time = _desk_training_run()
    assert second_time < 900.0
    assert [s["loss"] for s in first.steps] == [s["loss"] for s in second.steps]
    report(8, f"3000 steps in {first_time:.0f} s, loss {first.initial_loss:.4f} -> "
              f"{first.final_loss:.4f} (ratio {ratio:.4f}), train PCK@0.1 {pck:.3f}, "
              f"rerun with the same seed replays the loss curve bit-exactly")


def test_criterion_9_ablation_variants_constructible_at_matched_cost():
    base = load_network_config("rsn50")
    lines = []
    for mode in ("baseline1", "baseline2"):
        variant, err = match_variant_flops(base, fusion_mode=mode)
        assert variant.fusion_mode == mode
        assert err == 0.0  # fusion rewires sums only; cost carries over exactly
        lines.append(f"{mode} {err:+.2%}")
    for branches in (2, 3, 5, 6):
        variant, err = match_variant_flops(base, branches=branches)
        assert variant.branches == branches
        assert abs(err) <= 0.05, f"b{branches} MACs deviate {err:+.2%}"
        lines.append(f"b{branches} {err:+.2%}")
    # Every variant also builds and runs at desk scale.
    tiny = load_network_config("rsn-tiny")
    x = np.random.default_rng(0).normal(size=(2, 3, tiny.input_h, tiny.input_w))
    built = 0
    for mode in FUSION_MODES:
        for branches in range(2, 7):
            variant, err = match_variant_flops(tiny, branches=branches,
                                               fusion_mode=mode)
            assert abs(err) <= 0.05
            g = build_network(variant, seed=0)
            out = g.forward(x.astype(g.dtype))
            assert out[-1].data.shape == (2, variant.keypoints,
                                          *variant.heatmap_size())
            built += 1
    report(9, f"rsn50 MAC deviations: {', '.join(lines)}; {built} tiny variants "
              f"built and ran forward")


def test_criterion_10_full_scale_benchmarks_stated_out_of_scope():
    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    for needle in ("78.6", "93.0", "not reproducible at desk scale"):
        assert needle in readme, f"README must state the scope limit ({needle!r})"
    report(10, "README states the full-dataset AP/PCKh figures are not "
               "reproducible at desk scale and names the gates that stand in")
