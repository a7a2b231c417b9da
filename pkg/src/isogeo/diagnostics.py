"""Geometric measurements on trained encoders.

Every Monte-Carlo estimate is returned with its standard error and is a
deterministic function of the supplied RngState.  The central quantity is
the trajectory deviation index (TDI): the layer-averaged, magnitude-
normalized expected squared representation displacement under isotropic
Gaussian input noise,

    TDI(phi, sigma) = (1/L) sum_l  E||phi_(1:l)(x+delta) - phi_(1:l)(x)||^2
                                   ----------------------------------------
                                   E||phi_(1:l)(x)||^2

with delta ~ N(0, sigma^2 I).  The sigma -> 0 limit is probed at sigma=0.01,
well below any training perturbation; the result records the probe scale
actually used.  Denominators always use clean inputs.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateDirectionError,
    UndefinedRetentionError,
    ValidationError,
)
from .linalg import as_matrix, as_vector, jacobi_eigh, gram_schmidt_project_out, spectral_norm
from .network import (
    MlpEncoderDecoder,
    batch_encoder_jacobians,
    encoder_forward,
    input_gradient,
)
from .rng import RngState, choice_without_replacement, derive, normal

TDI_ZERO_PROBE = 0.01  # probe scale standing in for the sigma -> 0 limit
DEGENERATE_LAYER_TOL = 1e-12


class Estimate(NamedTuple):
    """Monte-Carlo estimate with standard error and sample count."""

    value: float
    se: float
    n: int


def _mean_se(samples: np.ndarray) -> Estimate:
    m = int(samples.size)
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
    return Estimate(mean, se, m)


@dataclass(frozen=True)
class TdiResult:
    value: float
    se: float
    sigma_probe: float
    sigma_requested: float
    per_layer: tuple
    mc_draws: int

    @property
    def probed_at_zero(self) -> bool:
        return self.sigma_requested == 0.0


def tdi(
    net: MlpEncoderDecoder,
    x,
    sigma: float,
    mc_draws: int,
    rng: RngState,
) -> tuple[TdiResult, RngState]:
    """Trajectory deviation index over an evaluation batch.

    The standard error is computed across independent noise draws
    (conditional on the evaluation batch).  A layer whose clean second
    moment falls below DEGENERATE_LAYER_TOL raises
    DegenerateDirectionError, since the normalization is undefined there.
    """
    if mc_draws < 1:
        raise ValidationError("mc_draws must be >= 1")
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    x = as_matrix(np.atleast_2d(x), "x")
    sigma_probe = TDI_ZERO_PROBE if sigma == 0.0 else float(sigma)
    trace_c = encoder_forward(net, x)
    denoms = np.array([float(np.mean(np.sum(z**2, axis=1))) for z in trace_c])
    if np.any(denoms < DEGENERATE_LAYER_TOL):
        bad = int(np.argmax(denoms < DEGENERATE_LAYER_TOL))
        raise DegenerateDirectionError(
            f"layer {bad + 1} has vanishing representation magnitude; TDI undefined"
        )
    L = len(trace_c)
    per_draw = np.zeros(mc_draws)
    layer_sums = np.zeros(L)
    for j in range(mc_draws):
        delta, rng = normal(rng, x.shape, sigma_probe)
        trace_n = encoder_forward(net, x + delta)
        ratios = [
            float(np.mean(np.sum((zn - zc) ** 2, axis=1))) / d
            for zn, zc, d in zip(trace_n, trace_c, denoms)
        ]
        layer_sums += ratios
        per_draw[j] = float(np.mean(ratios))
    est = _mean_se(per_draw)
    return (
        TdiResult(
            value=est.value,
            se=est.se,
            sigma_probe=sigma_probe,
            sigma_requested=float(sigma),
            per_layer=tuple(layer_sums / mc_draws),
            mc_draws=mc_draws,
        ),
        rng,
    )


def embedding_drift(
    net: MlpEncoderDecoder,
    x,
    sigma: float,
    mc_draws: int,
    rng: RngState,
) -> tuple[Estimate, RngState]:
    """Unnormalized expected squared displacement of the final representation.

    For a linear encoder W this equals sigma^2 ||W||_F^2 in expectation.
    """
    if mc_draws < 1:
        raise ValidationError("mc_draws must be >= 1")
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    x = as_matrix(np.atleast_2d(x), "x")
    rep_c = encoder_forward(net, x)[-1]
    per_draw = np.zeros(mc_draws)
    for j in range(mc_draws):
        delta, rng = normal(rng, x.shape, sigma)
        rep_n = encoder_forward(net, x + delta)[-1]
        per_draw[j] = float(np.mean(np.sum((rep_n - rep_c) ** 2, axis=1)))
    return _mean_se(per_draw), rng


class RemainderResult(NamedTuple):
    """Paired estimate of drift minus its linearization."""

    remainder: Estimate
    drift: float
    linear_term: float


def linearization_remainder(
    net: MlpEncoderDecoder,
    x,
    sigma: float,
    mc_draws: int,
    rng: RngState,
) -> tuple[RemainderResult, RngState]:
    """Estimate D(phi, sigma) - sigma^2 E||J_phi||_F^2 by paired sampling.

    Each noise draw contributes ||phi(x+d)-phi(x)||^2 - ||J_phi(x) d||^2 with
    the same d in both terms, which cancels the O(sigma^2) leading term, and
    the +d/-d antithetic average cancels the odd-order fluctuation, leaving
    an O(sigma^4) quantity with O(sigma^4) noise.  For a linear encoder the
    paired difference is exactly zero.
    """
    if mc_draws < 1:
        raise ValidationError("mc_draws must be >= 1")
    x = as_matrix(np.atleast_2d(x), "x")
    rep_c = encoder_forward(net, x)[-1]
    jac = batch_encoder_jacobians(net, x)  # (n, rep, d)
    fro2 = float(np.mean(np.sum(jac**2, axis=(1, 2))))
    diffs = np.zeros(mc_draws)
    drift_draws = np.zeros(mc_draws)
    for j in range(mc_draws):
        delta, rng = normal(rng, x.shape, sigma)
        lin = np.sum(np.einsum("nrd,nd->nr", jac, delta) ** 2, axis=1)
        disp_p = np.sum((encoder_forward(net, x + delta)[-1] - rep_c) ** 2, axis=1)
        disp_m = np.sum((encoder_forward(net, x - delta)[-1] - rep_c) ** 2, axis=1)
        diffs[j] = float(np.mean(0.5 * (disp_p + disp_m) - lin))
        drift_draws[j] = float(np.mean(0.5 * (disp_p + disp_m)))
    est = _mean_se(diffs)
    return RemainderResult(est, float(drift_draws.mean()), sigma**2 * fro2), rng


class FdFrobeniusResult(NamedTuple):
    """Finite-difference Frobenius estimates: coordinate-mean and unbiased."""

    literal: Estimate  # (1/K) sum_k ||phi(x+h e_k)-phi(x)||^2 / h^2
    unbiased: Estimate  # scaled by d_in/K; unbiased for ||J||_F^2
    coords: tuple


def jac_frobenius_fd(
    net: MlpEncoderDecoder,
    x,
    k_probes: int,
    h: float,
    rng: RngState | None = None,
) -> FdFrobeniusResult:
    """Squared Jacobian Frobenius norm from coordinate finite differences.

    Probes k_probes input coordinates sampled without replacement (a fixed
    internal stream is used when no rng is given, so the default is still
    deterministic).  The coordinate-mean estimator underestimates the full
    norm by a factor k/d_in; the unbiased variant rescales by d_in/k and is
    the one reports should use.  Standard errors are across batch rows,
    conditional on the sampled coordinate set.
    """
    if h <= 0:
        raise ValidationError("h must be > 0")
    x = as_matrix(np.atleast_2d(x), "x")
    d = x.shape[1]
    if not (1 <= k_probes <= d):
        raise ValidationError(f"k_probes must be in [1, {d}], got {k_probes}")
    if k_probes == d:
        coords = np.arange(d)
    else:
        stream = rng if rng is not None else derive(0, "fd-frobenius-default")
        coords, _ = choice_without_replacement(stream, d, k_probes)
        coords = np.sort(coords)
    rep_c = encoder_forward(net, x)[-1]
    per_row = np.zeros(x.shape[0])
    for c in coords:
        xp = x.copy()
        xp[:, c] += h
        rep_p = encoder_forward(net, xp)[-1]
        per_row += np.sum((rep_p - rep_c) ** 2, axis=1) / h**2
    literal_rows = per_row / k_probes
    unbiased_rows = per_row * (d / k_probes)
    return FdFrobeniusResult(
        _mean_se(literal_rows), _mean_se(unbiased_rows), tuple(int(c) for c in coords)
    )


def directional_sensitivity(net: MlpEncoderDecoder, x, w, h: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of ||J_phi(x) w|| per batch row."""
    w = as_vector(w, "w")
    if abs(np.linalg.norm(w) - 1.0) > 1e-10:
        raise ValidationError("probe direction w must be unit-norm within 1e-10")
    if h <= 0:
        raise ValidationError("h must be > 0")
    x2 = as_matrix(np.atleast_2d(x), "x")
    rep_p = encoder_forward(net, x2 + h * w)[-1]
    rep_m = encoder_forward(net, x2 - h * w)[-1]
    vals = np.linalg.norm(rep_p - rep_m, axis=1) / (2.0 * h)
    return vals if np.asarray(x).ndim == 2 else float(vals[0])


def anisotropy_index(net: MlpEncoderDecoder, x, w) -> float:
    """E||J||_F^2 / E||J w||^2 over the batch, from analytic Jacobians.

    Always >= 1; equals 1 exactly when the Jacobian is rank-1 with w as its
    right singular direction, and d_in for an isotropic (identity-like) map.
    """
    w = as_vector(w, "w")
    if abs(np.linalg.norm(w) - 1.0) > 1e-10:
        raise ValidationError("probe direction w must be unit-norm within 1e-10")
    jac = batch_encoder_jacobians(net, x)
    num = float(np.mean(np.sum(jac**2, axis=(1, 2))))
    den = float(np.mean(np.sum(np.einsum("nrd,d->nr", jac, w) ** 2, axis=1)))
    if den < 1e-12:
        raise DegenerateDirectionError(
            "probe direction has vanishing sensitivity; anisotropy undefined"
        )
    return num / den


@dataclass(frozen=True)
class LipschitzEstimate:
    """Decoder Lipschitz constant as a product of layer spectral norms.

    The decoder is a single linear layer here, so the product has one factor;
    encoder layer norms are carried for reporting only.
    """

    layer_norms: tuple
    value: float
    encoder_layer_norms: tuple = ()

    def __post_init__(self):
        prod = float(np.prod(self.layer_norms)) if self.layer_norms else 0.0
        if abs(prod - self.value) > 1e-12 * max(1.0, abs(prod)):
            raise ValidationError("Lipschitz value must equal the product of layer norms")


def lipschitz_track(
    net: MlpEncoderDecoder, max_iters: int = 2000, tol: float = 1e-12
) -> LipschitzEstimate:
    """Power-iteration spectral norms: decoder head (the tracked constant)
    plus per-encoder-layer norms for reporting."""
    dec = spectral_norm(net.decoder.weight, max_iters=max_iters, tol=tol).value
    enc = tuple(
        spectral_norm(layer.weight, max_iters=max_iters, tol=tol).value
        for layer in net.encoder
    )
    return LipschitzEstimate(layer_norms=(dec,), value=dec, encoder_layer_norms=enc)


def jacobian_lipschitz_fd(
    net: MlpEncoderDecoder,
    x,
    rng: RngState,
    n_pairs: int = 100,
    distance: float = 0.1,
) -> tuple[float, RngState]:
    """Finite-difference estimate of the Jacobian's Lipschitz constant.

    Max over probe pairs of ||J(x) - J(x')||_F / ||x - x'||, with pairs at
    the given distance around batch rows.  The max is biased high, which is
    the conservative direction for remainder-bound checks.
    """
    x = as_matrix(np.atleast_2d(x), "x")
    best = 0.0
    for _ in range(n_pairs):
        idx, rng = choice_without_replacement(rng, x.shape[0], 1)
        base = x[idx[0]]
        direction, rng = normal(rng, x.shape[1])
        direction = direction / np.linalg.norm(direction) * distance
        j0 = batch_encoder_jacobians(net, base[None, :])[0]
        j1 = batch_encoder_jacobians(net, (base + direction)[None, :])[0]
        best = max(best, float(np.linalg.norm(j1 - j0) / np.linalg.norm(direction)))
    return best, rng


def nuisance_subspace(
    net: MlpEncoderDecoder,
    x,
    y,
    r: int,
    signal_dirs: Sequence[np.ndarray],
    loss: str = "mse",
) -> tuple[np.ndarray, np.ndarray]:
    """Dominant input-gradient directions after removing known signal axes.

    Builds the second-moment matrix of per-sample input-loss gradients,
    projects out the supplied signal directions (Gram-Schmidt), and returns
    the top r eigenvectors of the projected matrix together with the
    directional sensitivity E||J_phi w_k||^2 of each.  r = 0 returns empty
    arrays.
    """
    x = as_matrix(np.atleast_2d(x), "x")
    d = x.shape[1]
    if r < 0:
        raise ValidationError("r must be >= 0")
    dirs = [as_vector(v, "signal direction") for v in signal_dirs]
    if r + len(dirs) > d:
        raise ValidationError(f"r + len(signal_dirs) = {r + len(dirs)} exceeds d_in = {d}")
    if r == 0:
        return np.zeros((0, d)), np.zeros(0)
    grads = input_gradient(net, x, y, loss)
    second_moment = grads.T @ grads / x.shape[0]
    # Orthonormalize the signal directions, then deflate the matrix.
    ortho: list[np.ndarray] = []
    for v in dirs:
        try:
            ortho.append(gram_schmidt_project_out(ortho, v))
        except DegenerateDirectionError:
            continue  # direction already spanned; nothing new to remove
    proj = np.eye(d)
    for u in ortho:
        proj -= np.outer(u, u)
    deflated = proj @ second_moment @ proj
    deflated = 0.5 * (deflated + deflated.T)
    vals, vecs = jacobi_eigh(deflated)
    top = vecs[:, :r].T  # rows are directions
    jac = batch_encoder_jacobians(net, x)
    sens = np.array(
        [float(np.mean(np.sum(np.einsum("nrd,d->nr", jac, w) ** 2, axis=1))) for w in top]
    )
    return top, sens


class ProbeRetention(NamedTuple):
    acc_clean: float
    acc_noisy: float
    retention: float


def _fit_ridge_probe(reps: np.ndarray, labels: np.ndarray, ridge: float) -> np.ndarray:
    k = int(labels.max()) + 1
    onehot = np.zeros((labels.shape[0], k))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    a = np.hstack([reps, np.ones((reps.shape[0], 1))])
    gram = a.T @ a + ridge * np.eye(a.shape[1])
    return np.linalg.solve(gram, a.T @ onehot)


def _probe_accuracy(weights: np.ndarray, reps: np.ndarray, labels: np.ndarray) -> float:
    a = np.hstack([reps, np.ones((reps.shape[0], 1))])
    pred = np.argmax(a @ weights, axis=1)
    return float(np.mean(pred == labels))


def probe_retention(
    net: MlpEncoderDecoder,
    x_train,
    labels_train,
    x_eval,
    labels_eval,
    layer: int,
    sigma: float,
    rng: RngState,
    ridge: float = 1e-3,
) -> tuple[ProbeRetention, RngState]:
    """Linear-probe retention at one encoder layer.

    Fits a ridge-regularized linear classifier (one-hot targets, argmax
    decoding) on frozen *clean* layer representations of the training split,
    then compares eval accuracy on clean inputs against inputs perturbed by
    N(0, sigma^2 I).  Retention = noisy accuracy / clean accuracy; sigma = 0
    reuses the clean representations so retention is exactly 1.
    """
    if not (1 <= layer <= net.n_layers):
        raise ValidationError(f"layer must be in [1, {net.n_layers}], got {layer}")
    labels_train = np.asarray(labels_train, dtype=np.int64)
    labels_eval = np.asarray(labels_eval, dtype=np.int64)
    reps_train = encoder_forward(net, x_train)[layer - 1]
    weights = _fit_ridge_probe(reps_train, labels_train, ridge)
    x_eval = as_matrix(np.atleast_2d(x_eval), "x_eval")
    reps_eval = encoder_forward(net, x_eval)[layer - 1]
    acc_clean = _probe_accuracy(weights, reps_eval, labels_eval)
    if acc_clean == 0.0:
        raise UndefinedRetentionError("clean probe accuracy is zero; retention undefined")
    if sigma == 0.0:
        return ProbeRetention(acc_clean, acc_clean, 1.0), rng
    delta, rng = normal(rng, x_eval.shape, sigma)
    reps_noisy = encoder_forward(net, x_eval + delta)[layer - 1]
    acc_noisy = _probe_accuracy(weights, reps_noisy, labels_eval)
    return ProbeRetention(acc_clean, acc_noisy, acc_noisy / acc_clean), rng


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    """All geometry measurements for one model snapshot.

    ``tdi`` and ``drift`` map evaluation noise scales to (value, se);
    ``tdi_at_0`` records the probe scale standing in for sigma -> 0.
    """

    run_id: str
    tdi: dict = field(default_factory=dict)  # sigma -> (value, se)
    tdi_at_0: dict = field(default_factory=dict)  # {"value", "se", "sigma_probe"}
    drift: dict = field(default_factory=dict)  # sigma -> (value, se)
    jac_fro: dict = field(default_factory=dict)  # {"unbiased", "literal", "se", ...}
    directional: dict = field(default_factory=dict)  # probe name -> (mean, se)
    anisotropy: float = float("nan")
    lipschitz: dict = field(default_factory=dict)
    mc_draws: int = 0
    eval_rows: int = 0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "tdi": {f"{s:.17g}": [v, se] for s, (v, se) in sorted(self.tdi.items())},
            "tdi_at_0": self.tdi_at_0,
            "drift": {f"{s:.17g}": [v, se] for s, (v, se) in sorted(self.drift.items())},
            "jac_fro": self.jac_fro,
            "directional": {k: [v, se] for k, (v, se) in self.directional.items()},
            "anisotropy": self.anisotropy,
            "lipschitz": self.lipschitz,
            "mc_draws": self.mc_draws,
            "eval_rows": self.eval_rows,
            "seed": self.seed,
        }

    def to_json(self, path: str) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".json.tmp")
        try:
            with os.fdopen(fd, "w") as f:
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
                f.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise

    def csv_rows(self) -> list[tuple]:
        """Flattened (run_id, metric, sigma, value, se) rows."""
        rows: list[tuple] = []
        if self.tdi_at_0:
            rows.append(
                (
                    self.run_id,
                    "tdi_at_0",
                    self.tdi_at_0["sigma_probe"],
                    self.tdi_at_0["value"],
                    self.tdi_at_0["se"],
                )
            )
        for s, (v, se) in sorted(self.tdi.items()):
            rows.append((self.run_id, "tdi", s, v, se))
        for s, (v, se) in sorted(self.drift.items()):
            rows.append((self.run_id, "drift", s, v, se))
        if self.jac_fro:
            rows.append(
                (self.run_id, "jac_fro", self.jac_fro.get("h", 0.0),
                 self.jac_fro["unbiased"], self.jac_fro["se_unbiased"])
            )
        for name, (v, se) in self.directional.items():
            rows.append((self.run_id, f"directional:{name}", 0.0, v, se))
        if np.isfinite(self.anisotropy):
            rows.append((self.run_id, "anisotropy", 0.0, self.anisotropy, 0.0))
        if self.lipschitz:
            rows.append((self.run_id, "lipschitz", 0.0, self.lipschitz["value"], 0.0))
        return rows

    def to_csv(self, path: str) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".csv.tmp")
        try:
            with os.fdopen(fd, "w") as f:
                f.write("run_id,metric,sigma,value,se\n")
                for run_id, metric, sigma, value, se in self.csv_rows():
                    f.write(f"{run_id},{metric},{sigma:.17g},{value:.17g},{se:.17g}\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise


def diagnose(
    net: MlpEncoderDecoder,
    x_eval,
    sigma_grid: Sequence[float],
    rng: RngState,
    mc_draws: int = 64,
    run_id: str = "run",
    fd_probes: int | None = None,
    fd_h: float = 0.01,
    probe_directions: dict | None = None,
) -> DiagnosticsReport:
    """Assemble a full diagnostics report for one model snapshot."""
    x_eval = as_matrix(np.atleast_2d(x_eval), "x_eval")
    report = DiagnosticsReport(
        run_id=run_id, mc_draws=mc_draws, eval_rows=x_eval.shape[0], seed=rng.seed
    )
    zero, rng = tdi(net, x_eval, 0.0, mc_draws, rng)
    report.tdi_at_0 = {"value": zero.value, "se": zero.se, "sigma_probe": zero.sigma_probe}
    for s in sigma_grid:
        res, rng = tdi(net, x_eval, float(s), mc_draws, rng)
        report.tdi[float(s)] = (res.value, res.se)
        dr, rng = embedding_drift(net, x_eval, float(s), mc_draws, rng)
        report.drift[float(s)] = (dr.value, dr.se)
    k = x_eval.shape[1] if fd_probes is None else fd_probes
    fro = jac_frobenius_fd(net, x_eval, k, fd_h, rng=derive(rng, "fd"))
    report.jac_fro = {
        "unbiased": fro.unbiased.value,
        "se_unbiased": fro.unbiased.se,
        "literal": fro.literal.value,
        "se_literal": fro.literal.se,
        "k_probes": k,
        "h": fd_h,
    }
    if probe_directions:
        for name, w in probe_directions.items():
            vals = directional_sensitivity(net, x_eval, w)
            report.directional[name] = (float(vals.mean()), _mean_se(vals).se)
        first = next(iter(probe_directions.values()))
        report.anisotropy = anisotropy_index(net, x_eval, first)
    lip = lipschitz_track(net)
    report.lipschitz = {
        "value": lip.value,
        "encoder_layer_norms": list(lip.encoder_layer_norms),
    }
    return report
