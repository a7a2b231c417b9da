"""Acceptance suite: every headline property at its stated tolerance.

Each criterion prints one ``[PASS]``/``[FAIL]`` line (visible under
``pytest -s``) and asserts both the scientific condition and its runtime
budget.  The two trained-model criteria (8 and 9) train dozens of networks
and dominate the runtime; everything else is fast.
"""

import os
import time

import numpy as np
import pytest

from isogeo import checks as ck
from isogeo import experiments as xp
from isogeo.network import (
    NetSpec,
    backward,
    batch_encoder_jacobians,
    encoder_forward,
    forward_with_trace,
    init_network,
    input_gradient,
)
from isogeo.objectives import mse_loss
from isogeo.rng import RngState, normal


def _report(num: int, description: str, passed: bool, elapsed: float, budget: float):
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] criterion {num:2d}: {description} ({elapsed:.1f}s / budget {budget:.0f}s)")
    assert passed, f"criterion {num} failed: {description}"
    assert elapsed < budget, f"criterion {num} exceeded its runtime budget"


def test_criterion_01_exact_suppression_cost():
    t0 = time.time()
    r = ck.check_suppression_cost_exact(rhos=(0.1, 0.5, 0.9), n=1_000_000, seed=0)
    ok = r.passed
    for rho, target in ((0.1, 0.01), (0.5, 0.25), (0.9, 0.81)):
        gap = r.measured[f"gap_rho={rho:g}"]
        se = r.se[f"gap_rho={rho:g}"]
        ok = ok and abs(gap - target) <= 3 * se
    _report(1, "nuisance-blind loss gap equals rho^2 within 3 SE at 1e6 samples",
            ok, time.time() - t0, 10.0)


def test_criterion_02_isotropic_trace_identity():
    t0 = time.time()
    r = ck.check_isotropic_trace_identity(n_pairs=200, n_anisotropic=50, seed=0)
    ok = (
        r.passed
        and r.measured["sufficiency_failures"] == 0
        and r.measured["necessity_witnessed"] == 50
    )
    _report(2, "200 random (J, sigma) pairs within 4 SE; 50 anisotropic covariances witnessed",
            ok, time.time() - t0, 30.0)


def test_criterion_03_cap_fixed_point_full_sweep():
    t0 = time.time()
    caps = (0.10, 0.15, 0.25, 0.30, 0.40, 0.60)
    targets = (0.091, 0.130, 0.200, 0.231, 0.286, 0.375)
    r = ck.check_cap_fixed_point(caps=caps, seed=0)
    ok = r.passed
    for cap, target in zip(caps, targets):
        ok = ok and abs(r.measured[f"fraction_cap={cap:g}"] - target) <= 0.01
    _report(3, "cap sweep reproduces the fraction column {0.091..0.375} within 0.01",
            ok, time.time() - t0, 300.0)


def test_criterion_04_sensitivity_floor_on_trained_model():
    t0 = time.time()
    r = ck.check_nuisance_sensitivity_floor(seed=0)
    ok = (
        r.passed
        and r.measured["linearized_drift"] >= r.bounds["drift_floor"]
        and r.measured["directional_sensitivity"]
        >= r.bounds["directional_floor"] - r.bounds["directional_slack"]
    )
    _report(4, "trained linear encoder satisfies the drift and directional floors",
            ok, time.time() - t0, 120.0)


def test_criterion_05_linearized_drift_remainder():
    t0 = time.time()
    r = ck.check_linearized_drift(sigmas=(0.01, 0.02, 0.05), seed=0)
    ok = r.passed and abs(r.measured["linear_remainder"]) <= max(
        3 * r.se["linear_remainder"], 1e-15
    )
    for s in (0.01, 0.02, 0.05):
        ok = ok and abs(r.measured[f"tanh_remainder_sigma={s:g}"]) <= (
            r.bounds[f"tanh_bound_sigma={s:g}"] + 3 * r.se[f"tanh_remainder_sigma={s:g}"]
        )
    ratio = r.measured["scaling_ratio_02_01"]
    ok = ok and 8.0 <= ratio <= 32.0
    _report(5, f"remainder bounded by (3/2) b^2 d^2 s^4; scaling ratio {ratio:.1f} in [8, 32]",
            ok, time.time() - t0, 120.0)


def test_criterion_06_stein_identity_cubic():
    t0 = time.time()
    r = ck.check_stein_identity(g_tag="cubic", n=1_000_000, seed=0)
    ok = (
        r.passed
        and abs(r.measured["lhs"] - 3.0) <= 4 * r.se["lhs"]
        and abs(r.measured["rhs"] - 3.0) <= 4 * r.se["rhs"]
    )
    _report(6, "cubic Stein case: both sides equal 3 within 4 SE at 1e6 samples",
            ok, time.time() - t0, 10.0)


def test_criterion_07_anisotropy_floor():
    t0 = time.time()
    r = ck.check_anisotropy_floor(seed=0, trials=1000, dim=6)
    ok = (
        r.passed
        and r.measured["random_min"] >= 1.0 - 1e-9
        and abs(r.measured["rank1"] - 1.0) <= 1e-9
        and abs(r.measured["identity"] - 6.0) <= 1e-9
    )
    _report(7, "anisotropy >= 1 on 1000 maps; exactly 1 rank-1; exactly d identity",
            ok, time.time() - t0, 10.0)


def test_criterion_08_adversarial_geometry_signature():
    t0 = time.time()
    r = ck.check_adversarial_geometry_signature(seed=0, n_seeds=5)
    elapsed = time.time() - t0
    ok = (
        r.passed
        and r.measured["pgd_signature_seeds"] >= 3
        and r.measured["pmh_signature_seeds"] >= 3
    )
    print(
        f"          seeds showing PGD signature: {int(r.measured['pgd_signature_seeds'])}/5, "
        f"PMH signature: {int(r.measured['pmh_signature_seeds'])}/5"
    )
    _report(8, "majority of 5 seeds: PGD lower Jac-Fro with TDI not below ERM; PMH TDI <= ERM",
            ok, elapsed, 1800.0)


def test_criterion_09_alignment_grid():
    t0 = time.time()
    cfg = xp.default_config("talign", seed=0)
    table = xp.run_talign(cfg)
    matches = sum(table.get("_diag_match", c)[0] for c in table.col_keys)
    cost_under = table.get("_summary", table.col_keys[0])[0]
    cost_over = table.get("_summary", table.col_keys[1])[0]
    ok = matches >= 3 and cost_under > cost_over
    print(
        f"          diagonal matches: {int(matches)}/4, "
        f"under-suppression cost {cost_under:.4f} vs over-suppression {cost_over:.4f}"
    )
    _report(9, "majority of eval columns minimized at matching sigma_train; cost asymmetry",
            ok, time.time() - t0, 2700.0)


def test_criterion_10_gradient_correctness_20_nets():
    t0 = time.time()
    worst = 0.0
    eps = 1e-5
    for seed in range(20):
        spec = NetSpec(input_dim=5, hidden=(7,), rep_dim=4, out_dim=1, activation="tanh")
        net, _ = init_network(spec, RngState(seed))
        x, r = normal(RngState(3000 + seed), (4, 5))
        y, _ = normal(r, 4)
        pred, trace = forward_with_trace(net, x)
        _, gp = mse_loss(pred, y)
        grads = backward(net, x, trace, gp)

        def loss_at(n):
            p, _ = forward_with_trace(n, x)
            return mse_loss(p, y)[0]

        for li, layer in enumerate(net.encoder):
            o, i = layer.weight.shape
            for idx in ((0, 0), (o - 1, i - 1), (o // 2, i // 2)):
                np_, nm = net.copy(), net.copy()
                np_.encoder[li].weight[idx] += eps
                nm.encoder[li].weight[idx] -= eps
                fd = (loss_at(np_) - loss_at(nm)) / (2 * eps)
                worst = max(worst, abs(grads.encoder[li][0][idx] - fd) / max(abs(fd), 1e-8))
        np_, nm = net.copy(), net.copy()
        np_.decoder.weight[0, 0] += eps
        nm.decoder.weight[0, 0] -= eps
        fd = (loss_at(np_) - loss_at(nm)) / (2 * eps)
        worst = max(worst, abs(grads.decoder[0][0, 0] - fd) / max(abs(fd), 1e-8))

        # analytic Jacobian vs central differences
        jac = batch_encoder_jacobians(net, x[:1])[0]
        h = 1e-5
        for k in range(5):
            xp_, xm = x[0].copy(), x[0].copy()
            xp_[k] += h
            xm[k] -= h
            col = (
                encoder_forward(net, xp_[None])[-1][0] - encoder_forward(net, xm[None])[-1][0]
            ) / (2 * h)
            scale = max(np.max(np.abs(col)), 1e-8)
            worst = max(worst, float(np.max(np.abs(jac[:, k] - col)) / scale))

        # input gradient vs central differences
        g = input_gradient(net, x[:1], y[:1], "mse")[0]
        for k in range(5):
            xp_, xm = x[0].copy(), x[0].copy()
            xp_[k] += h
            xm[k] -= h
            pp, _ = forward_with_trace(net, xp_[None])
            pm, _ = forward_with_trace(net, xm[None])
            fd = ((pp[0, 0] - y[0]) ** 2 - (pm[0, 0] - y[0]) ** 2) / (2 * h)
            worst = max(worst, abs(g[k] - fd) / max(abs(fd), 1e-8))
    ok = worst < 1e-6
    _report(10, f"gradients and Jacobians within 1e-6 of central differences (worst {worst:.2e})",
            ok, time.time() - t0, 30.0)


def test_criterion_11_byte_identical_reruns(tmp_path):
    t0 = time.time()
    cfg = xp.default_config(
        "capsweep", seed=11, steps=600, cap_grid=(0.25, 0.3), eval_rows=64, mc_draws=4
    )
    paths = []
    for tag in ("a", "b"):
        table = xp.run_capsweep(cfg)
        paths.append(xp.emit(table, str(tmp_path / tag)))
    same_csv = open(paths[0][0], "rb").read() == open(paths[1][0], "rb").read()
    same_json = open(paths[0][1], "rb").read() == open(paths[1][1], "rb").read()

    cmp_cfg = xp.default_config(
        "compare", seed=12, steps=300, eval_rows=48, mc_draws=4,
        methods=("erm", "pmh"), sigma_eval=(0.05, 0.1),
    )
    t1 = xp.run_compare(cmp_cfg)
    t2 = xp.run_compare(cmp_cfg)
    same_tables = t1.cells == t2.cells
    ok = same_csv and same_json and same_tables
    _report(11, "experiment reruns with identical config+seed emit byte-identical CSV/JSON",
            ok, time.time() - t0, 120.0)


def test_criterion_12_nuisance_subspace_recovery():
    t0 = time.time()
    r = ck.check_nuisance_subspace_recovery(seed=0)
    ok = r.passed and r.measured["cosine"] >= 0.99
    _report(12, f"post-projection top gradient direction |cos| = {r.measured['cosine']:.4f} >= 0.99",
            ok, time.time() - t0, 30.0)
