"""Correlated-nuisance generative models and their exact reference predictors.

Two data sources live here:

* :class:`GaussianNuisanceModel` — a linear Gaussian model whose input splits
  into a signal block ``s`` and a nuisance block ``n``, with label

      y = <w_s, s> + rho * <w_n, n> + eps,   eps ~ N(0, sigma_eps^2),

  s ~ N(0, I), n ~ N(0, I) independent and ||w_s|| = ||w_n|| = 1.  ``rho`` is
  the nuisance *regression coefficient* (it equals the nuisance-label
  correlation only when labels are normalized to unit variance, which the
  ``normalize_labels`` flag arranges).  The conditional-mean predictor and
  the signal-only predictor are available in closed form, which makes loss
  gaps exactly computable: suppressing the nuisance costs exactly rho^2 in
  mean squared error.

* :class:`DiscreteNuisanceToy` — a finite (s, n, y) joint distribution on
  which mutual informations, conditional entropies, and loss gaps are exact
  enumeration sums rather than Monte-Carlo estimates.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .linalg import as_matrix, as_vector
from .rng import RngState, normal, uniform

UNIT_TOL = 1e-12


def _unit(v: np.ndarray, name: str) -> np.ndarray:
    v = as_vector(v, name)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValidationError(f"{name} must be unit-norm within {UNIT_TOL}")
    return v


@dataclass(frozen=True)
class GaussianNuisanceModel:
    """Linear Gaussian model with a label-correlated nuisance block."""

    d_s: int
    d_n: int
    w_s: np.ndarray
    w_n: np.ndarray
    rho: float
    sigma_eps: float
    normalize_labels: bool = False

    def __post_init__(self):
        if self.d_s < 1 or self.d_n < 1:
            raise ValidationError("d_s and d_n must be >= 1")
        if self.rho < 0:
            raise ValidationError(f"rho must be >= 0, got {self.rho}")
        if self.sigma_eps < 0:
            raise ValidationError(f"sigma_eps must be >= 0, got {self.sigma_eps}")
        object.__setattr__(self, "w_s", _unit(self.w_s, "w_s"))
        object.__setattr__(self, "w_n", _unit(self.w_n, "w_n"))
        if self.w_s.shape != (self.d_s,) or self.w_n.shape != (self.d_n,):
            raise ShapeError("w_s/w_n dimensions must match d_s/d_n")

    @classmethod
    def canonical(
        cls,
        d_s: int,
        d_n: int,
        rho: float,
        sigma_eps: float,
        normalize_labels: bool = False,
    ) -> "GaussianNuisanceModel":
        """Model with deterministic weight directions (first basis vector of
        each block), which keeps the analytic checks exact."""
        w_s = np.zeros(d_s)
        w_s[0] = 1.0
        w_n = np.zeros(d_n)
        w_n[0] = 1.0
        return cls(d_s, d_n, w_s, w_n, rho, sigma_eps, normalize_labels)

    @classmethod
    def random_directions(
        cls,
        d_s: int,
        d_n: int,
        rho: float,
        sigma_eps: float,
        rng: RngState,
        normalize_labels: bool = False,
    ) -> tuple["GaussianNuisanceModel", RngState]:
        ws, rng = normal(rng, d_s)
        wn, rng = normal(rng, d_n)
        ws /= np.linalg.norm(ws)
        wn /= np.linalg.norm(wn)
        return cls(d_s, d_n, ws, wn, rho, sigma_eps, normalize_labels), rng

    @property
    def d_in(self) -> int:
        return self.d_s + self.d_n

    @property
    def label_scale(self) -> float:
        """Divisor applied to labels; 1 unless normalize_labels is set."""
        if self.normalize_labels:
            return float(np.sqrt(1.0 + self.rho**2 + self.sigma_eps**2))
        return 1.0

    def bayes_mse(self) -> float:
        """MSE of the conditional-mean predictor: sigma_eps^2 (rescaled)."""
        return self.sigma_eps**2 / self.label_scale**2

    def signal_only_mse(self) -> float:
        """MSE of the best nuisance-blind predictor: rho^2 + sigma_eps^2."""
        return (self.rho**2 + self.sigma_eps**2) / self.label_scale**2


@dataclass(frozen=True)
class LabeledBatch:
    """Sampled rows: x columns are signal-then-nuisance, exactly partitioned."""

    x: np.ndarray
    y: np.ndarray
    d_s: int
    d_n: int

    def __post_init__(self):
        x = as_matrix(self.x, "x")
        y = as_vector(self.y, "y")
        if x.shape[1] != self.d_s + self.d_n:
            raise ShapeError(
                f"x has {x.shape[1]} columns, expected d_s + d_n = {self.d_s + self.d_n}"
            )
        if y.shape[0] != x.shape[0]:
            raise ShapeError("x and y row counts differ")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def signal(self) -> np.ndarray:
        return self.x[:, : self.d_s]

    @property
    def nuisance(self) -> np.ndarray:
        return self.x[:, self.d_s :]


def sample(model: GaussianNuisanceModel, n: int, rng: RngState) -> tuple[LabeledBatch, RngState]:
    """Draw n rows; s, n, eps independent, y from the model equation."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    s, rng = normal(rng, (n, model.d_s))
    nn, rng = normal(rng, (n, model.d_n))
    eps, rng = normal(rng, n, model.sigma_eps)
    y = s @ model.w_s + model.rho * (nn @ model.w_n) + eps
    y = y / model.label_scale
    return LabeledBatch(np.hstack([s, nn]), y, model.d_s, model.d_n), rng


def _check_layout(model: GaussianNuisanceModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(as_matrix(np.atleast_2d(x), "x"))
    if x.shape[1] != model.d_in:
        raise ShapeError(f"x has {x.shape[1]} columns, model expects {model.d_in}")
    return x


def bayes_predictor(model: GaussianNuisanceModel, x) -> np.ndarray:
    """Conditional mean E[y | x] = <w_s, s> + rho <w_n, n> (exact, linear)."""
    x = _check_layout(model, x)
    s, nn = x[:, : model.d_s], x[:, model.d_s :]
    return (s @ model.w_s + model.rho * (nn @ model.w_n)) / model.label_scale


def signal_only_predictor(model: GaussianNuisanceModel, x) -> np.ndarray:
    """Best nuisance-blind predictor E[y | s] = <w_s, s>."""
    x = _check_layout(model, x)
    return (x[:, : model.d_s] @ model.w_s) / model.label_scale


def threshold_labels(y: np.ndarray) -> np.ndarray:
    """Binary class labels from a continuous target (sign threshold at 0)."""
    return (np.asarray(y) > 0.0).astype(np.int64)


def model_batch_source(model: GaussianNuisanceModel):
    """Adapter giving the training loop a (rng, n) -> (x, y, rng) sampler."""

    def source(rng: RngState, n: int):
        batch, rng = sample(model, n, rng)
        return batch.x, batch.y, rng

    return source


def export_csv(batch: LabeledBatch, path: str) -> None:
    """Write a batch as CSV with header s_0..s_{ds-1}, n_0..n_{dn-1}, y.

    Values use 17 significant digits so float64 round-trips losslessly.
    The write is atomic (temp file + rename).
    """
    header = (
        [f"s_{i}" for i in range(batch.d_s)]
        + [f"n_{i}" for i in range(batch.d_n)]
        + ["y"]
    )
    rows = np.hstack([batch.x, batch.y[:, None]])
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".csv.tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(f"{v:.17g}" for v in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# ---------------------------------------------------------------------------
# Discrete toy distribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteNuisanceToy:
    """Finite (s, n, y) joint distribution with exact enumeration queries.

    ``p_y_given_x[s, n, :]`` are conditional rows (each summing to 1) and
    ``p_x[s, n]`` is the input marginal.  All information quantities are in
    nats and computed by exact sums over the table.
    """

    p_y_given_x: np.ndarray
    p_x: np.ndarray
    input_values: tuple = field(init=False)

    def __post_init__(self):
        cond = np.asarray(self.p_y_given_x, dtype=np.float64)
        if cond.ndim != 3:
            raise ValidationError("p_y_given_x must have shape (S, N, Y)")
        if np.any(cond < 0) or not np.all(np.isfinite(cond)):
            raise ValidationError("p_y_given_x entries must be finite and nonnegative")
        if np.max(np.abs(cond.sum(axis=2) - 1.0)) > 1e-12:
            raise ValidationError("conditional rows of p_y_given_x must sum to 1 within 1e-12")
        px = np.asarray(self.p_x, dtype=np.float64)
        if px.shape != cond.shape[:2]:
            raise ShapeError("p_x shape must match the (S, N) leading axes of p_y_given_x")
        if np.any(px < 0) or abs(px.sum() - 1.0) > 1e-12:
            raise ValidationError("p_x must be a distribution summing to 1 within 1e-12")
        object.__setattr__(self, "p_y_given_x", cond)
        object.__setattr__(self, "p_x", px)
        # Real-valued embedding of the level indices, used when training
        # continuous encoders on the toy: levels spread over [-1, 1].
        s_lv, n_lv = cond.shape[0], cond.shape[1]
        s_vals = np.linspace(-1.0, 1.0, s_lv) if s_lv > 1 else np.zeros(1)
        n_vals = np.linspace(-1.0, 1.0, n_lv) if n_lv > 1 else np.zeros(1)
        object.__setattr__(self, "input_values", (s_vals, n_vals))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.p_y_given_x.shape

    def joint(self) -> np.ndarray:
        """Full joint p(s, n, y)."""
        return self.p_x[:, :, None] * self.p_y_given_x

    def p_y_given_s(self) -> np.ndarray:
        """p(y | s) by marginalizing the nuisance, shape (S, Y)."""
        joint = self.joint()
        p_sy = joint.sum(axis=1)
        p_s = self.p_x.sum(axis=1)
        out = np.zeros_like(p_sy)
        nz = p_s > 0
        out[nz] = p_sy[nz] / p_s[nz, None]
        return out

    def kl_gap(self) -> float:
        """Delta = E_x[ KL(p(y|x) || p(y|s)) ], the nuisance-blindness gap.

        Equals the conditional mutual information I(n; y | s); zero exactly
        when y is independent of n given s.
        """
        p_ys = self.p_y_given_s()
        total = 0.0
        S, N, Y = self.shape
        for si in range(S):
            for ni in range(N):
                w = self.p_x[si, ni]
                if w == 0:
                    continue
                for yi in range(Y):
                    p = self.p_y_given_x[si, ni, yi]
                    if p == 0:
                        continue
                    q = p_ys[si, yi]
                    if q == 0:
                        raise ValidationError(
                            "p(y|s) has a zero where p(y|x) > 0; KL gap is infinite"
                        )
                    total += w * p * np.log(p / q)
        return float(total)

    def mutual_information_ny(self) -> float:
        """I(n; y), marginal nuisance-label dependence."""
        joint = self.joint()
        p_ny = joint.sum(axis=0)
        p_n = p_ny.sum(axis=1)
        p_y = p_ny.sum(axis=0)
        total = 0.0
        for ni in range(p_ny.shape[0]):
            for yi in range(p_ny.shape[1]):
                p = p_ny[ni, yi]
                if p > 0:
                    total += p * np.log(p / (p_n[ni] * p_y[yi]))
        return float(max(total, 0.0))

    def conditional_mi_ny_given_s(self) -> float:
        """I(n; y | s); same quantity as kl_gap(), via the chain-rule sum."""
        return self.kl_gap()

    def entropy_y_given_s(self) -> float:
        """H(y | s) in nats."""
        p_ys = self.p_y_given_s()
        p_s = self.p_x.sum(axis=1)
        total = 0.0
        for si in range(p_ys.shape[0]):
            for yi in range(p_ys.shape[1]):
                p = p_ys[si, yi]
                if p > 0:
                    total -= p_s[si] * p * np.log(p)
        return float(total)

    def satisfies_nuisance_condition(self, tol: float = 1e-12) -> bool:
        """True when n predicts y marginally but not given s."""
        return self.mutual_information_ny() > tol and self.conditional_mi_ny_given_s() <= tol

    def encode_input(self, s_idx: np.ndarray, n_idx: np.ndarray) -> np.ndarray:
        """Map level indices to real 2-D inputs in [-1, 1]^2."""
        sv = np.asarray(self.input_values[0], dtype=np.float64)[np.asarray(s_idx)]
        nv = np.asarray(self.input_values[1], dtype=np.float64)[np.asarray(n_idx)]
        return np.stack([sv, nv], axis=-1)

    def support_points(self) -> tuple[np.ndarray, np.ndarray]:
        """All (s, n) cells as encoded inputs, with their probabilities."""
        S, N, _ = self.shape
        si, ni = np.meshgrid(np.arange(S), np.arange(N), indexing="ij")
        x = self.encode_input(si.ravel(), ni.ravel())
        return x, self.p_x.ravel().copy()

    def sample(self, n: int, rng: RngState) -> tuple[np.ndarray, np.ndarray, RngState]:
        """Draw (x, y) pairs: x encoded real inputs, y integer labels."""
        if n < 1:
            raise ValidationError(f"n must be >= 1, got {n}")
        S, N, Y = self.shape
        flat_joint = self.joint().ravel()
        u, rng = uniform(rng, n)
        idx = np.searchsorted(np.cumsum(flat_joint), u, side="right")
        idx = np.minimum(idx, flat_joint.size - 1)
        si, rem = np.divmod(idx, N * Y)
        ni, yi = np.divmod(rem, Y)
        return self.encode_input(si, ni), yi.astype(np.int64), rng

    def batch_source(self):
        def source(rng: RngState, n: int):
            x, y, rng = self.sample(n, rng)
            return x, y, rng

        return source


def discrete_nuisance_toy(p_table, p_x=None) -> DiscreteNuisanceToy:
    """Build a toy from a conditional table p(y | s, n) of shape (S, N, Y).

    ``p_x`` defaults to the uniform distribution over the (s, n) cells.
    """
    cond = np.asarray(p_table, dtype=np.float64)
    if cond.ndim != 3:
        raise ValidationError("p_table must have shape (S, N, Y)")
    if p_x is None:
        p_x = np.full(cond.shape[:2], 1.0 / (cond.shape[0] * cond.shape[1]))
    return DiscreteNuisanceToy(cond, np.asarray(p_x, dtype=np.float64))
