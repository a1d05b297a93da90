"""Training machinery and direct solvers.

One half drives the network: Adam over named parameter arrays, a staircase
exponential learning-rate schedule, early stopping on validation loss, and
the epoch loop tying them together. The other half solves the linear
baselines directly: least squares by Householder QR, conjugate gradients on
the normal equations, and ridge regression.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DefinitenessError,
    NumericError,
    ParameterError,
    RankError,
    ShapeError,
    SymmetryError,
)
from .linalg import RandomSource
from .nn import ModelParams, commit_batchnorm, model_backward, model_forward


@dataclass
class LrSchedule:
    initial: float = 0.001
    decay_factor: float = 0.9
    decay_steps: int = 10_000
    staircase: bool = True

    def validate(self) -> None:
        if not 0.0 < self.decay_factor < 1.0:
            raise ParameterError(f"decay_factor must lie in (0, 1), got {self.decay_factor}")
        if self.initial <= 0 or self.decay_steps < 1:
            raise ParameterError("initial rate must be positive and decay_steps >= 1")


def lr_at_step(schedule: LrSchedule, step: int) -> float:
    """Learning rate after ``step`` optimizer updates (step 0 = initial)."""
    schedule.validate()
    if step < 0:
        raise ParameterError(f"step must be >= 0, got {step}")
    exponent = step / schedule.decay_steps
    if schedule.staircase:
        exponent = float(step // schedule.decay_steps)
    return schedule.initial * schedule.decay_factor ** exponent


class Adam:
    """Adam over a dict of named arrays; state is shape-congruent with them."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
        """One in-place update of every array in ``params``."""
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, theta in params.items():
            g = grads[name]
            if g.shape != theta.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, "
                                 f"parameter has {theta.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(theta)
                self.v[name] = np.zeros_like(theta)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / correct1
            v_hat = v / correct2
            theta -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class EarlyStopper:
    """Track validation loss; stop after ``patience`` epochs without
    improvement by more than ``min_delta``, restoring the best snapshot."""

    patience: int = 15
    min_delta: float = 1e-4
    best_loss: float = field(default=np.inf)
    stale_epochs: int = 0
    best_params: Optional[ModelParams] = None

    def update(self, val_loss: float, params: ModelParams) -> str:
        """Returns "continue" or "stop"."""
        if not np.isfinite(val_loss):
            raise NumericError(f"validation loss is not finite: {val_loss}")
        if self.best_loss - val_loss > self.min_delta:
            self.best_loss = float(val_loss)
            self.stale_epochs = 0
            self.best_params = params.copy()
            return "continue"
        self.stale_epochs += 1
        if self.stale_epochs > self.patience:
            return "stop"
        return "continue"

    def restore(self, fallback: ModelParams) -> ModelParams:
        return self.best_params if self.best_params is not None else fallback


# ---------------------------------------------------------------------------
# direct solvers


def _householder_qr(A: np.ndarray):
    """Thin QR via Householder reflections; returns (Q^T b applicator, R).

    Returns the reflectors so Q^T can be applied to a vector without
    forming Q.
    """
    m, n = A.shape
    R = A.copy()
    reflectors = []
    for j in range(n):
        x = R[j:, j]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            reflectors.append(None)
            continue
        v = x.copy()
        v[0] += np.copysign(norm_x, x[0])
        v /= np.linalg.norm(v)
        R[j:, j:] -= 2.0 * np.outer(v, v @ R[j:, j:])
        reflectors.append(v)
    return reflectors, R


def _apply_qt(reflectors, b: np.ndarray) -> np.ndarray:
    out = b.astype(np.float64).copy()
    for j, v in enumerate(reflectors):
        if v is None:
            continue
        out[j:] -= 2.0 * v * (v @ out[j:])
    return out


def solve_lls(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minimize ||Xw - y||^2 by Householder QR (not normal equations)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"incompatible shapes X{X.shape}, y{y.shape}")
    m, n = X.shape
    if m < n:
        raise ShapeError(f"need at least as many rows as columns, got {m}x{n}")
    reflectors, R = _householder_qr(X)
    diag = np.abs(np.diag(R[:n, :n]))
    tol = max(m, n) * np.finfo(np.float64).eps * (diag.max() if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < n:
        raise RankError(f"design matrix is rank deficient: numerical rank {rank} < {n}")
    qty = _apply_qt(reflectors, y)[:n]
    w = np.zeros(n)
    for i in range(n - 1, -1, -1):
        w[i] = (qty[i] - R[i, i + 1:n] @ w[i + 1:]) / R[i, i]
    return w


def solve_cg(A: np.ndarray, b: np.ndarray, tol: float = 1e-10,
             max_iter: Optional[int] = None) -> np.ndarray:
    """Conjugate gradients for symmetric positive definite A, from x0 = 0."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ShapeError(f"incompatible shapes A{A.shape}, b{b.shape}")
    scale = np.abs(A).max()
    if scale > 0 and np.abs(A - A.T).max() > 1e-10 * scale:
        raise SymmetryError("matrix is not symmetric within 1e-10")
    if max_iter is None:
        max_iter = 10 * n
    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    b_norm = np.sqrt(b @ b)
    if b_norm == 0.0:
        return x
    for _ in range(max_iter):
        if np.sqrt(rr) / b_norm <= tol:
            break
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise DefinitenessError("conjugate gradient broke down: p'Ap <= 0")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_next = r @ r
        p = r + (rr_next / rr) * p
        rr = rr_next
    return x


def solve_ridge(X: np.ndarray, y: np.ndarray, lam: float,
                unpenalized: Optional[int] = None) -> np.ndarray:
    """Minimize ||Xw - y||^2 + lam * ||w||^2 via the regularized normal
    equations. ``unpenalized`` names a column (the intercept) left out of
    the penalty."""
    if lam < 0:
        raise ParameterError(f"ridge penalty must be >= 0, got {lam}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"incompatible shapes X{X.shape}, y{y.shape}")
    n = X.shape[1]
    penalty = np.full(n, lam)
    if unpenalized is not None:
        penalty[unpenalized] = 0.0
    A = X.T @ X + np.diag(penalty)
    return np.linalg.solve(A, X.T @ y)


# ---------------------------------------------------------------------------
# network training loop


@dataclass
class TrainSettings:
    epochs: int = 200
    batch_size: int = 64
    schedule: LrSchedule = field(default_factory=LrSchedule)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 15
    min_delta: float = 1e-4


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False


def predict_network(params: ModelParams, X_seq: np.ndarray,
                    batch_size: int = 256) -> np.ndarray:
    """Inference-mode predictions for (N, T, d) input, batched for memory."""
    data = np.asarray(getattr(X_seq, "data", X_seq), dtype=np.float64)
    out = np.empty(data.shape[0])
    for start in range(0, data.shape[0], batch_size):
        chunk = data[start:start + batch_size]
        preds, _ = model_forward(chunk, params, mode="infer")
        out[start:start + len(chunk)] = preds
    return out


def train_network(
    params: ModelParams,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    settings: TrainSettings,
    rng: RandomSource,
) -> tuple[ModelParams, TrainHistory]:
    """Minibatch Adam with LR decay and early stopping on validation MSE.

    Batches whose tail would be a single sample fold it into the previous
    batch (train-mode batch norm needs at least two rows).
    """
    X_train = np.asarray(getattr(X_train, "data", X_train), dtype=np.float64)
    X_val = np.asarray(getattr(X_val, "data", X_val), dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    n = X_train.shape[0]
    if n < 2:
        raise ParameterError("training needs at least 2 samples")

    optimizer = Adam(settings.beta1, settings.beta2, settings.adam_eps)
    stopper = EarlyStopper(patience=settings.patience, min_delta=settings.min_delta)
    history = TrainHistory()
    learnable = params.learnable()
    step = 0

    for epoch in range(settings.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        start = 0
        while start < n:
            stop = start + settings.batch_size
            if n - stop == 1:
                stop = n
            batch_idx = order[start:min(stop, n)]
            start = stop
            xb = X_train[batch_idx]
            yb = y_train[batch_idx]
            _, cache = model_forward(xb, params, mode="train", rng=rng)
            loss, grads = model_backward(cache, yb, params)
            commit_batchnorm(cache, params)
            optimizer.step(learnable, grads, lr_at_step(settings.schedule, step))
            step += 1
            epoch_loss += loss
            n_batches += 1

        val_preds = predict_network(params, X_val)
        val_mse = float(np.mean((val_preds - y_val) ** 2))
        history.train_loss.append(epoch_loss / max(1, n_batches))
        history.val_loss.append(val_mse)
        history.epochs_run = epoch + 1
        if stopper.update(val_mse, params) == "stop":
            history.stopped_early = True
            break

    return stopper.restore(params), history
