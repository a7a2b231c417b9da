"""Training objectives: plain ERM, projected-gradient adversarial training,
and Gaussian perturbation matching (PMH) with its cap mechanism.

The PMH penalty is the expected squared representation displacement under
isotropic Gaussian input noise,

    L_pmh = mean_i || phi(x_i) - phi(x_i + delta_i) ||^2,
    delta_i ~ N(0, sigma^2 I),

whose first-order value is sigma^2 E||J_phi||_F^2, i.e. a uniform Frobenius
penalty on the encoder Jacobian.  The total PMH objective averages the clean
and noisy task views (so the penalty-free, zero-noise configuration is
step-identical to ERM) and adds lam * w(t) * L_pmh, where w(t) is a warmup
ramp and lam is rescaled per step so the logged penalty never exceeds
cap * task loss.  At steady state that rescaling pins the penalty fraction
to cap / (1 + cap).
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError, ValidationError
from .network import (
    MlpEncoderDecoder,
    NetSpec,
    ParamGrads,
    _per_sample_pred_grad,
    backward,
    encoder_backward,
    encoder_forward,
    forward_with_trace,
    init_network,
    input_backward,
    input_gradient,
    sgd_step,
    softmax,
    zero_grads,
)
from .rng import RngState, derive, normal, uniform

OBJECTIVES = ("erm", "pgd", "pmh")


# ---------------------------------------------------------------------------
# Losses (batch-mean value plus gradient on the prediction)
# ---------------------------------------------------------------------------


def mse_loss(pred: np.ndarray, y) -> tuple[float, np.ndarray]:
    target = np.asarray(y, dtype=np.float64)
    if target.ndim == 1:
        target = target[:, None]
    diff = pred - target
    n = pred.shape[0]
    return float(np.sum(diff**2) / n), 2.0 * diff / n


def cross_entropy_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    labels = np.asarray(labels)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    value = float(-logp[np.arange(n), labels].mean())
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return value, grad / n


_LOSSES = {"mse": mse_loss, "cross-entropy": cross_entropy_loss}


def task_loss(pred: np.ndarray, y, loss: str) -> tuple[float, np.ndarray]:
    if loss not in _LOSSES:
        raise ValidationError(f"unknown loss tag {loss!r}")
    return _LOSSES[loss](pred, y)


# ---------------------------------------------------------------------------
# Warmup
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WarmupSchedule:
    """Ramp from 0 at step t0 to 1 at step t0 + duration."""

    t0: int = 0
    duration: int = 1
    shape: str = "linear"  # or "cosine"

    def __post_init__(self):
        if self.duration < 1:
            raise ValidationError("warmup duration must be >= 1")
        if self.shape not in ("linear", "cosine"):
            raise ValidationError(f"unknown warmup shape {self.shape!r}")


def warmup_weight(t: int, schedule: WarmupSchedule) -> float:
    """w(t) = min(1, (t - t0)/T) for the linear shape; cosine uses the
    half-cosine ramp with the same endpoints.  0 before t0, 1 after t0 + T,
    monotone nondecreasing in between."""
    frac = (t - schedule.t0) / schedule.duration
    if frac <= 0.0:
        return 0.0
    if frac >= 1.0:
        return 1.0
    if schedule.shape == "linear":
        return float(frac)
    return float(0.5 * (1.0 - math.cos(math.pi * frac)))


# ---------------------------------------------------------------------------
# PMH penalty
# ---------------------------------------------------------------------------


def _normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    safe = np.maximum(norms, 1e-30)
    return z / safe, safe


def pmh_loss(
    net: MlpEncoderDecoder,
    x: np.ndarray,
    sigma: float,
    rng: RngState,
    layers: str = "final",
) -> tuple[float, ParamGrads, np.ndarray, RngState]:
    """Representation-matching penalty and its encoder gradients.

    One fresh noise row per batch row; gradients flow through both the clean
    and the noisy branch.  ``layers="final"`` matches the encoder output;
    ``layers="all"`` averages l2-normalized displacement over every encoder
    layer (multi-scale matching).  Returns (value, grads, x_noisy, rng) so
    the caller can reuse the perturbed batch for the noisy task view.
    """
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    if layers not in ("final", "all"):
        raise ValidationError(f"unknown matching mode {layers!r}")
    n = x.shape[0]
    delta, rng = normal(rng, x.shape, sigma)
    x_noisy = x + delta
    trace_c = encoder_forward(net, x)
    trace_n = encoder_forward(net, x_noisy)
    L = len(trace_c)

    if layers == "final":
        diff = trace_c[-1] - trace_n[-1]
        value = float(np.sum(diff**2) / n)
        up = 2.0 * diff / n
        ups_clean = [None] * L
        ups_noisy = [None] * L
        ups_clean[-1] = up
        ups_noisy[-1] = -up
    else:
        value = 0.0
        ups_clean = [None] * L
        ups_noisy = [None] * L
        for li in range(L):
            zc, nc = _normalize_rows(trace_c[li])
            zn, nn_ = _normalize_rows(trace_n[li])
            diff = zc - zn
            value += float(np.sum(diff**2) / n) / L
            up = 2.0 * diff / (n * L)
            # chain through row normalization: d(z/||z||) pullback
            ups_clean[li] = (up - (np.sum(up * zc, axis=1, keepdims=True)) * zc) / nc
            ups_noisy[li] = -(up - (np.sum(up * zn, axis=1, keepdims=True)) * zn) / nn_

    grads = encoder_backward(net, x, trace_c, ups_clean)
    grads.add_(encoder_backward(net, x_noisy, trace_n, ups_noisy))
    return value, grads, x_noisy, rng


def cap_rescale(l_task: float, l_pmh_raw: float, lam: float, cap: float) -> float:
    """Effective penalty weight after the cap: scale lam down to equality
    whenever lam * l_pmh_raw would exceed cap * l_task.

    Degenerate rule: a zero task loss with a positive raw penalty gives
    weight 0 (the cap admits no penalty at all in that state).
    """
    if min(l_task, l_pmh_raw, lam, cap) < 0:
        raise ValidationError("cap_rescale inputs must be nonnegative")
    if lam * l_pmh_raw <= cap * l_task:
        return float(lam)
    if l_task == 0.0:
        return 0.0
    return float(cap * l_task / l_pmh_raw)


def multiscale_sigma(rng: RngState, lo: float, hi: float) -> tuple[float, RngState]:
    """One log-uniform noise-scale draw from [lo, hi]; degenerate ranges
    return lo exactly."""
    if lo <= 0:
        raise ValidationError(f"log-uniform range needs lo > 0, got {lo}")
    if lo > hi:
        raise ValidationError(f"need lo <= hi, got [{lo}, {hi}]")
    if lo == hi:
        return float(lo), rng.next()
    u, rng = uniform(rng, ())
    return float(np.exp(np.log(lo) + float(u) * (np.log(hi) - np.log(lo)))), rng


# ---------------------------------------------------------------------------
# PGD attack
# ---------------------------------------------------------------------------


def pgd_attack(
    net: MlpEncoderDecoder,
    x: np.ndarray,
    y,
    epsilon: float,
    steps: int,
    step_size: float,
    loss: str = "mse",
) -> np.ndarray:
    """L-infinity projected gradient ascent on the per-sample loss.

    delta starts at 0; after every step each coordinate is clipped back to
    [-epsilon, epsilon], so the constraint holds exactly on return.
    """
    if epsilon < 0:
        raise ValidationError(f"epsilon must be >= 0, got {epsilon}")
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    if epsilon == 0.0:
        return np.zeros_like(x)
    delta = np.zeros_like(x)
    for _ in range(steps):
        g = input_gradient(net, x + delta, y, loss)
        delta = np.clip(delta + step_size * np.sign(g), -epsilon, epsilon)
    return delta


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float = 0.1
    steps: int = 20
    step_size: float | None = None  # defaults to epsilon / 4

    def resolved_step_size(self) -> float:
        return self.epsilon / 4.0 if self.step_size is None else self.step_size


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "erm"
    sigma_train: "float | tuple[float, float]" = 0.1
    lam: float = 100.0
    cap: float = 0.3
    warmup: WarmupSchedule = field(default_factory=WarmupSchedule)
    pgd: PgdConfig = field(default_factory=PgdConfig)
    lr: float = 0.05
    steps: int = 2000
    batch_size: int = 32
    seed: int = 0
    loss: str = "mse"
    pmh_layers: str = "final"  # or "all" (multi-scale matching)
    pmh_noisy_task: bool = True  # include the noisy-view task term

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"objective must be one of {OBJECTIVES}")
        if self.lr <= 0:
            raise ValidationError("learning rate must be > 0")
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch_size must be >= 1")
        if self.cap < 0 or self.lam < 0:
            raise ValidationError("cap and lam must be >= 0")
        if isinstance(self.sigma_train, tuple):
            lo, hi = self.sigma_train
            if lo > hi:
                raise ValidationError("sigma_train range must satisfy lo <= hi")
            if lo <= 0:
                raise ValidationError("sigma_train range needs lo > 0")
        elif self.sigma_train < 0:
            raise ValidationError("sigma_train must be >= 0")
        if self.pgd.epsilon < 0:
            raise ValidationError("pgd epsilon must be >= 0")


@dataclass
class TrainLog:
    """Per-step records; fraction = pmh/(task + pmh) from the same row."""

    step: np.ndarray
    task_loss: np.ndarray
    pmh_loss: np.ndarray
    eff_lambda: np.ndarray
    fraction: np.ndarray
    warmup: np.ndarray

    def steady_state_fraction(self, tail: float = 0.2) -> float:
        """Mean penalty fraction over the final `tail` share of steps."""
        k = max(1, int(round(tail * len(self.step))))
        return float(self.fraction[-k:].mean())

    def to_csv(self, path: str) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".csv.tmp")
        try:
            with os.fdopen(fd, "w") as f:
                f.write("step,task_loss,pmh_loss,eff_lambda,fraction,warmup\n")
                for i in range(len(self.step)):
                    f.write(
                        f"{int(self.step[i])},{self.task_loss[i]:.17g},"
                        f"{self.pmh_loss[i]:.17g},{self.eff_lambda[i]:.17g},"
                        f"{self.fraction[i]:.17g},{self.warmup[i]:.17g}\n"
                    )
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise


def _sigma_for_step(config: TrainConfig, rng_sigma: RngState) -> tuple[float, RngState]:
    if isinstance(config.sigma_train, tuple):
        return multiscale_sigma(rng_sigma, *config.sigma_train)
    return float(config.sigma_train), rng_sigma


def train(
    config: TrainConfig,
    spec: NetSpec,
    data_source,
) -> tuple[MlpEncoderDecoder, TrainLog]:
    """SGD training loop, deterministic under config.seed.

    ``data_source(rng, n) -> (x, y, rng)`` supplies fresh batches.  The
    objective selects the per-step loss:

    * erm:  task loss on the clean batch.
    * pgd:  task loss at x + delta with delta from the inner l-infinity attack.
    * pmh:  mean of the clean and noisy task views (noisy view optional)
            plus the capped, warmed-up matching penalty.

    Raises TrainingDivergedError with the step index if the loss goes
    non-finite.
    """
    net, _ = init_network(spec, derive(config.seed, "init"))
    rng_data = derive(config.seed, "data")
    rng_noise = derive(config.seed, "noise")
    rng_sigma = derive(config.seed, "sigma")

    steps = config.steps
    log_step = np.arange(steps, dtype=np.int64)
    log_task = np.zeros(steps)
    log_pmh = np.zeros(steps)
    log_lam = np.zeros(steps)
    log_frac = np.zeros(steps)
    log_warm = np.zeros(steps)

    for t in range(steps):
        x, y, rng_data = data_source(rng_data, config.batch_size)
        w_t = warmup_weight(t, config.warmup)

        if config.objective == "erm":
            pred, trace = forward_with_trace(net, x)
            l_task, g_pred = task_loss(pred, y, config.loss)
            grads = backward(net, x, trace, g_pred)
            pmh_term, lam_eff = 0.0, 0.0

        elif config.objective == "pgd":
            delta = pgd_attack(
                net,
                x,
                y,
                config.pgd.epsilon,
                config.pgd.steps,
                config.pgd.resolved_step_size(),
                config.loss,
            )
            x_adv = x + delta
            pred, trace = forward_with_trace(net, x_adv)
            l_task, g_pred = task_loss(pred, y, config.loss)
            grads = backward(net, x_adv, trace, g_pred)
            pmh_term, lam_eff = 0.0, 0.0

        else:  # pmh
            sigma_t, rng_sigma = _sigma_for_step(config, rng_sigma)
            l_raw, pmh_grads, x_noisy, rng_noise = pmh_loss(
                net, x, sigma_t, rng_noise, config.pmh_layers
            )
            pred, trace = forward_with_trace(net, x)
            l_clean, g_pred = task_loss(pred, y, config.loss)
            if config.pmh_noisy_task:
                pred_n, trace_n = forward_with_trace(net, x_noisy)
                l_noisy, g_pred_n = task_loss(pred_n, y, config.loss)
                l_task = 0.5 * (l_clean + l_noisy)
                grads = backward(net, x, trace, 0.5 * g_pred)
                grads.add_(backward(net, x_noisy, trace_n, 0.5 * g_pred_n))
            else:
                l_task = l_clean
                grads = backward(net, x, trace, g_pred)
            lam_eff = cap_rescale(l_task, l_raw, config.lam * w_t, config.cap)
            if lam_eff > 0.0:
                grads.add_(pmh_grads.scaled(lam_eff))
            pmh_term = lam_eff * l_raw

        if not np.isfinite(l_task) or not np.isfinite(pmh_term):
            raise TrainingDivergedError(f"loss diverged at step {t}", step=t)

        sgd_step(net, grads, config.lr)

        log_task[t] = l_task
        log_pmh[t] = pmh_term
        log_lam[t] = lam_eff
        total = l_task + pmh_term
        log_frac[t] = pmh_term / total if total > 0 else 0.0
        log_warm[t] = w_t

    return net, TrainLog(log_step, log_task, log_pmh, log_lam, log_frac, log_warm)
