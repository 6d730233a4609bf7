"""Acceptance suite: every criterion at its stated tolerance, one PASS/FAIL
line per criterion (run with ``pytest tests/test_acceptance.py -v -s``).

The full-scale tables of the original experiments are out of desk reach, so
acceptance is oracle- and property-based plus trend checks at toy scale.
"""

import functools
import json
import time

import numpy as np
import pytest

from certdw import (
    ExperimentConfig,
    LinearClassifier,
    NoiseSpec,
    SeededStream,
    analytic_pd_linear,
    beta2_star_gaussian,
    beta2_star_uniform,
    calibration_threshold,
    certified_region,
    estimate_pd,
    evaluate_wsr,
    gaussian_certified_radius,
    gaussian_condition,
    gen_toy_dataset,
    make_blended_noise_trigger,
    perturbation_grid_sweep,
    poison_dataset,
    run_pipeline,
    std_normal_quantile,
    train_model,
    verify,
)
from certdw.conformal import CalibrationSet
from certdw.cli import main as cli_main

from oracles import beta2_gaussian_mc, beta2_uniform_exhaustive

SHAPE = (3, 8, 8)


def criterion(name, budget_s=None):
    """Print the per-criterion verdict line and enforce the runtime budget."""

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.monotonic()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[acceptance] {name}: FAIL")
                raise
            elapsed = time.monotonic() - start
            if budget_s is not None and elapsed > budget_s:
                print(f"[acceptance] {name}: FAIL (runtime {elapsed:.1f}s "
                      f"> {budget_s}s)")
                raise AssertionError(
                    f"{name} exceeded runtime budget: {elapsed:.1f}s > {budget_s}s"
                )
            print(f"[acceptance] {name}: PASS ({elapsed:.1f}s)")
        return wrapper

    return decorate


def binary_linear(w, b, shape=SHAPE):
    w = np.asarray(w, dtype=np.float64).reshape(1, -1)
    return LinearClassifier(np.vstack([np.zeros_like(w), w]),
                            np.array([0.0, float(b)]), shape)


@criterion("1 smoothing oracle", budget_s=10)
def test_criterion_1_smoothing_oracle():
    rng = np.random.default_rng(101)
    d = int(np.prod(SHAPE))
    m = 10_000
    hits = 0
    for trial in range(50):
        w = rng.standard_normal(d)
        b = float(rng.standard_normal() * 0.5)
        x = rng.random(SHAPE)
        sigma = float(rng.uniform(0.3, 2.5))
        p = analytic_pd_linear(w, b, x, sigma)
        pd = estimate_pd(binary_linear(w, b), x, NoiseSpec.gaussian(sigma), m,
                         SeededStream(5000 + trial))
        bound = 3.0 * np.sqrt(p * (1.0 - p) / m) + 1.0 / m
        hits += abs(pd.probs[1] - p) <= bound
    assert hits >= int(np.ceil(0.95 * 50)), f"only {hits}/50 inside the bound"


@criterion("2 conformal equivalence", budget_s=1)
def test_criterion_2_conformal_equivalence():
    rng = np.random.default_rng(102)
    checked = 0
    mismatches = 0
    while checked < 1000:
        j = int(rng.integers(5, 80))
        calib = CalibrationSet(rng.random(j), float(rng.uniform(0.0, 0.8)))
        alpha0 = float(rng.uniform(0.02, 0.3))
        index = calib.size - calib.num_outliers - int(
            np.floor(alpha0 * (calib.size - calib.num_outliers + 1))
        )
        if index < 1:
            continue
        w = float(rng.random())
        threshold = calibration_threshold(calib, alpha0)
        if w == threshold:  # general position only
            continue
        decision = verify(calib, w, alpha0)
        mismatches += decision.trained_on_protected != (w > threshold)
        checked += 1
    assert mismatches == 0, f"{mismatches} mismatches in {checked} pairs"


@criterion("3 threshold arithmetic")
def test_criterion_3_threshold_index():
    values = np.sort(np.random.default_rng(103).random(100))
    calib = CalibrationSet(values, 0.2)
    assert calib.size == 100
    assert calib.num_outliers == 20
    # J - m - floor(alpha0 (J - m + 1)) = 80 - floor(4.05) = 76, 1-indexed
    assert calibration_threshold(calib, 0.05) == values[76 - 1]


@criterion("4 beta2* closed forms", budget_s=30)
def test_criterion_4_beta2_star_closed_forms():
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(20):
        w = float(rng.uniform(0.5, 0.97))
        norms = list(rng.uniform(0.1, 1.5, size=int(rng.integers(1, 4))))
        sigma = float(rng.uniform(0.6, 3.0))
        closed = beta2_star_gaussian(w, norms, sigma)
        sim = beta2_gaussian_mc(w, norms, sigma, trials=100_000,
                                seed=int(rng.integers(1 << 30)))
        worst = max(worst, abs(closed - sim))
    assert worst <= 0.01, f"gaussian beta2* off by {worst:.4f}"

    cells = 500
    for _ in range(20):
        e = float(rng.uniform(-1.5, 0.0))
        h = e + float(rng.uniform(0.4, 2.5))
        width = h - e
        mags = [int(rng.integers(0, cells + 1)) * width / cells
                for _ in range(int(rng.integers(1, 4)))]
        w = float(rng.random())
        closed = beta2_star_uniform(w, mags, e, h)
        exact = beta2_uniform_exhaustive(w, mags, e, h, cells=cells)
        assert abs(closed - exact) <= 1e-12


@criterion("5 certificate soundness")
def test_criterion_5_certificate_soundness():
    rng = np.random.default_rng(105)
    d = int(np.prod(SHAPE))
    violations = 0
    for _ in range(20):
        w = rng.standard_normal(d)
        sigma = float(rng.uniform(0.5, 2.0))
        threshold = float(rng.uniform(0.05, 0.42))
        target_w = float(rng.uniform(threshold + 0.52, 0.99))
        # place x so the analytic smoothed probability equals target_w
        x0 = rng.random(d)
        unit = w / np.linalg.norm(w)
        margin = float(w @ x0) / (sigma * np.linalg.norm(w))
        x = x0 + (std_normal_quantile(target_w) - margin) * sigma * unit
        attained = analytic_pd_linear(w, 0.0, x, sigma)
        assert abs(attained - target_w) < 1e-9
        radius = gaussian_certified_radius(attained, sigma, threshold).radius
        assert radius is not None
        probe_r = radius * (1.0 - 1e-9)
        assert gaussian_condition(attained, probe_r, sigma, threshold)
        directions = rng.standard_normal((1000, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        directions[0] = -unit  # include the worst case explicitly
        for u in directions:
            p = analytic_pd_linear(w, 0.0, x + probe_r * u, sigma)
            if p <= threshold:
                violations += 1
    assert violations == 0, f"{violations} probes broke the certificate"


@criterion("6 region trend", budget_s=5)
def test_criterion_6_region_area_trend():
    threshold = 0.3
    areas = [
        certified_region(sigma, threshold, (0.3, 1.3), (0.0, 1.0), 201).area
        for sigma in (1.5, 2.5, 3.5)
    ]
    assert areas[0] <= areas[1] <= areas[2], f"areas not nondecreasing: {areas}"
    assert areas[2] > 0.0


@criterion("7 end-to-end toy pipeline", budget_s=300)
def test_criterion_7_toy_pipeline():
    wm_hits = wm_total = 0
    ind_hits = ind_total = 0
    wsr_values = []
    ba_drops = []
    for seed in range(20):
        report = run_pipeline(ExperimentConfig(master_seed=seed))
        level = report.noise_levels[0]
        trials = [t for t in level.trials if t.error is None]
        wm = [t for t in trials if t.role == "watermarked"]
        ind = [t for t in trials if t.role == "independent"]
        wm_hits += sum(t.s_above_threshold for t in wm)
        wm_total += len(wm)
        ind_hits += sum(t.s_above_threshold for t in ind)
        ind_total += len(ind)
        wsr_values += [m.wsr for m in report.models if m.role == "watermarked"]
        ba_drops.append(level.aggregates["ba_drop"])
    vsr = wm_hits / wm_total
    fpr = ind_hits / ind_total
    wsr_mean = float(np.mean(wsr_values))
    ba_drop = float(np.mean(ba_drops))
    print(f"[acceptance]   pooled over 20 seeds: VSR={vsr:.3f} FPR={fpr:.3f} "
          f"WSR={wsr_mean:.3f} BA drop={ba_drop:+.4f} "
          f"({wm_total} wm / {ind_total} ind trials)")
    assert wm_total == 200 and ind_total == 200
    assert vsr >= 0.8, f"VSR {vsr:.3f} < 0.8"
    assert fpr <= 0.1, f"FPR {fpr:.3f} > 0.1"
    assert wsr_mean >= 0.9, f"mean WSR {wsr_mean:.3f} < 0.9"
    assert ba_drop <= 0.05, f"BA drop {ba_drop:.3f} > 0.05"


@criterion("8 determinism")
def test_criterion_8_run_determinism(tmp_path, monkeypatch):
    config = {"master_seed": 11, "num_benign": 4, "num_watermarked": 2,
              "num_independent": 2, "per_class": 30, "epochs": 20,
              "samples": 256, "region_grid_n": 21}
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))

    def run(out, threads):
        monkeypatch.setenv("CERTDW_THREADS", str(threads))
        assert cli_main(["run", "--config", str(cfg_path),
                         "--out", str(tmp_path / out)]) == 0
        return {p.name: p.read_bytes()
                for p in sorted((tmp_path / out).iterdir())}

    first = run("a", 1)
    second = run("b", 1)
    third = run("c", 3)
    monkeypatch.delenv("CERTDW_THREADS")
    assert set(first) == set(second) == set(third)
    for name in first:
        assert first[name] == second[name], f"{name} differs across runs"
        assert first[name] == third[name], f"{name} differs across thread counts"


@criterion("9 sweep identity")
def test_criterion_9_sweep_identity():
    s = SeededStream(900)
    train, test = gen_toy_dataset(4, 100, SHAPE, 0.05, s.child("data"))
    trig = make_blended_noise_trigger(SHAPE, 1, s.child("trigger"), l2_budget=0.8)
    wm = poison_dataset(train, trig, 0.1, s.child("poison"))
    model = train_model(wm.dataset, arch="mlp", epochs=100,
                        stream=s.child("train"))
    eps_a = [0.0, 0.05, 0.1, 0.2, 0.4]
    grid = perturbation_grid_sweep(model, trig, test, [0.0, 0.1], eps_a,
                                   NoiseSpec.gaussian(1.5), s.child("sweep"))
    base = evaluate_wsr(model, test, trig)
    assert grid[0, 0] == base, "grid origin must equal evaluate_wsr exactly"
    assert grid[0, -1] <= grid[0, 0], (
        f"adversarial WSR {grid[0, -1]:.3f} above origin {grid[0, 0]:.3f}"
    )
