"""Gradient-based fine-tuning of the tracker through its own recursion.

The tunables are the filter's acceleration-noise parameter and the per-view
affine covariance calibration applied to detections before fusion. All live
in unconstrained space (log for multiplicative quantities, inverse softplus
for the non-negative floor) so any optimizer step decodes to a valid value.
Gradients are exact: the filter propagates one forward-mode tangent per
tunable, which is cheaper than taping the recursion when the tunable count
is this small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .calibration import CalibrationParams
from .core import NotPositiveDefiniteError
from .heads import inv_softplus, sigmoid, softplus
from .kalman import DetectionFrame, FilterParams, Gaussian2D, run_sequence

Window = tuple[Sequence[DetectionFrame], np.ndarray]


@dataclass(frozen=True)
class TuneConfig:
    seq_len: int = 100
    epochs: int = 5
    lr: float = 1e-4
    lr_drop_epoch: int = 4
    grad_clip: float = 0.1
    batch: int = 8

    def __post_init__(self):
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        # lr == 0 is allowed as an explicit no-op optimizer.
        if self.lr < 0.0:
            raise ValueError("lr must be non-negative")
        if not self.grad_clip > 0.0:
            raise ValueError("grad_clip must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lr_drop_epoch < 1:
            raise ValueError("lr_drop_epoch must be >= 1")


@dataclass(frozen=True)
class TunableParams:
    """Unconstrained tunables: log sigma_accel plus per-view (log a, raw b)."""

    log_sigma_accel: float
    views: dict[str, tuple[float, float]]

    def __post_init__(self):
        object.__setattr__(self, "log_sigma_accel", float(self.log_sigma_accel))
        object.__setattr__(
            self,
            "views",
            {str(v): (float(la), float(rb)) for v, (la, rb) in self.views.items()},
        )

    @classmethod
    def from_natural(
        cls, sigma_accel: float, calib: dict[str, CalibrationParams]
    ) -> "TunableParams":
        return cls(
            math.log(sigma_accel),
            {v: (math.log(p.a), inv_softplus(p.b)) for v, p in calib.items()},
        )

    def view_order(self) -> list[str]:
        return sorted(self.views)

    def decode(self) -> tuple[float, dict[str, CalibrationParams]]:
        sigma = math.exp(self.log_sigma_accel)
        calib = {
            v: CalibrationParams(math.exp(la), softplus(rb))
            for v, (la, rb) in self.views.items()
        }
        return sigma, calib

    def to_vector(self) -> np.ndarray:
        vec = [self.log_sigma_accel]
        for v in self.view_order():
            vec.extend(self.views[v])
        return np.array(vec)

    def with_vector(self, vec: np.ndarray) -> "TunableParams":
        order = self.view_order()
        if len(vec) != 1 + 2 * len(order):
            raise ValueError(f"expected {1 + 2 * len(order)} values, got {len(vec)}")
        views = {v: (float(vec[1 + 2 * i]), float(vec[2 + 2 * i])) for i, v in enumerate(order)}
        return TunableParams(float(vec[0]), views)


def sequence_loss(
    params: TunableParams,
    frames: Sequence[DetectionFrame],
    truth: np.ndarray,
    init_vel_var: float = 1e4,
) -> tuple[float, np.ndarray]:
    """Mean per-step filtered NLL of a sequence and its exact gradient.

    The gradient is taken with respect to the unconstrained tunable vector
    (see to_vector for the ordering). Per-view calibration enters the filter
    as the observation covariance R = a * cov + b * I, with tangents
    dR/da = cov and dR/db = I pushed through every update.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.shape != (len(frames), 2):
        raise ValueError(
            f"truth shape {truth.shape} does not match {len(frames)} frames"
        )
    sigma, calib = params.decode()
    order = params.view_order()
    n_params = 1 + 2 * len(order)
    channel = {v: (1 + 2 * i, 2 + 2 * i) for i, v in enumerate(order)}
    eye2 = np.eye(2)

    def transform(view: str, g: Gaussian2D) -> tuple[Gaussian2D, np.ndarray]:
        dR = np.zeros((n_params, 2, 2))
        if view not in calib:
            return g, dR
        p = calib[view]
        ia, ib = channel[view]
        dR[ia] = g.cov
        dR[ib] = eye2
        return Gaussian2D(g.mean, p.a * g.cov + p.b * eye2), dR

    result = run_sequence(
        frames,
        FilterParams(sigma, init_vel_var),
        truth=truth,
        obs_transform=transform,
        n_params=n_params,
    )
    n_steps = result.n_nll_steps
    loss = result.total_nll / n_steps
    grad_natural = result.total_grad / n_steps

    grad = np.empty(n_params)
    grad[0] = grad_natural[0] * sigma  # d sigma / d log sigma
    for v in order:
        ia, ib = channel[v]
        _, raw_b = params.views[v]
        grad[ia] = grad_natural[ia] * calib[v].a
        grad[ib] = grad_natural[ib] * sigmoid(raw_b)
    return loss, grad


@dataclass
class TuneHistory:
    """Per-epoch record (epoch 0 is the pre-training evaluation)."""

    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    diverged: bool = False

    def add(self, epoch: int, train_nll: float, val_nll: float, sigma_accel: float):
        self.rows.append(
            {
                "epoch": epoch,
                "train_nll": float(train_nll),
                "val_nll": float(val_nll),
                "sigma_accel": float(sigma_accel),
            }
        )


def make_windows(
    frames: Sequence[DetectionFrame], truth: np.ndarray, seq_len: int
) -> list[Window]:
    """Chop a split into disjoint consecutive windows of seq_len frames."""
    truth = np.asarray(truth, dtype=float)
    if len(frames) < seq_len:
        raise ValueError(
            f"need at least seq_len={seq_len} frames, got {len(frames)}; "
            "use a smaller --seq-len"
        )
    windows = []
    for i in range(0, len(frames) - seq_len + 1, seq_len):
        windows.append((list(frames[i : i + seq_len]), truth[i : i + seq_len]))
    return windows


def _safe_loss(
    params: TunableParams, frames, truth, init_vel_var: float, n_params: int
) -> tuple[float, np.ndarray]:
    """sequence_loss with numerical blowups mapped to an infinite loss, so
    the divergence guard sees them instead of an exception."""
    try:
        loss, grad = sequence_loss(params, frames, truth, init_vel_var)
    except (NotPositiveDefiniteError, FloatingPointError, OverflowError):
        return math.inf, np.zeros(n_params)
    if not math.isfinite(loss):
        return math.inf, np.zeros(n_params)
    return loss, grad


def _mean_loss(params: TunableParams, windows: Sequence[Window], init_vel_var: float) -> float:
    n_params = 1 + 2 * len(params.views)
    return float(
        np.mean([_safe_loss(params, f, t, init_vel_var, n_params)[0] for f, t in windows])
    )


def tune(
    config: TuneConfig,
    params0: TunableParams,
    train_windows: Sequence[Window],
    val_windows: Sequence[Window],
    seed: int = 0,
    init_vel_var: float = 1e4,
    weight_decay: float = 1e-4,
) -> tuple[TunableParams, TuneHistory]:
    """Mini-batch optimization of the tunables against sequence NLL.

    First-order updates with momentum/second-moment normalization and
    decoupled weight decay; the gradient's L2 norm is clipped, and the
    learning rate drops by 10x from lr_drop_epoch on. Returns the parameters
    with the best validation NLL seen (epoch 0 included) and the history.
    If the training loss stops being finite the run aborts at the last
    finite state with the history flagged.
    """
    if not train_windows or not val_windows:
        raise ValueError("train and validation window sets must be non-empty")
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    history = TuneHistory(
        meta={
            "beta1": beta1,
            "beta2": beta2,
            "eps": eps,
            "weight_decay": weight_decay,
            "lr": config.lr,
            "lr_drop_epoch": config.lr_drop_epoch,
            "grad_clip": config.grad_clip,
            "batch": config.batch,
            "seed": seed,
        }
    )
    rng = np.random.default_rng(seed)
    vec = params0.to_vector()
    m = np.zeros_like(vec)
    v = np.zeros_like(vec)
    step = 0

    def snapshot(epoch: int) -> float:
        p = params0.with_vector(vec)
        train_nll = _mean_loss(p, train_windows, init_vel_var)
        val_nll = _mean_loss(p, val_windows, init_vel_var)
        history.add(epoch, train_nll, val_nll, p.decode()[0])
        return val_nll

    n_params = len(vec)
    best_val = snapshot(0)
    best_vec = vec.copy()
    best_epoch = 0
    history.meta["best_val_nll"] = best_val
    history.meta["best_epoch"] = best_epoch
    if not np.all(np.isfinite([history.rows[0]["train_nll"], best_val])):
        history.diverged = True
        return params0, history

    for epoch in range(1, config.epochs + 1):
        lr = config.lr / 10.0 if epoch >= config.lr_drop_epoch else config.lr
        perm = rng.permutation(len(train_windows))
        for lo in range(0, len(perm), config.batch):
            batch = perm[lo : lo + config.batch]
            losses, grads = zip(
                *(
                    _safe_loss(params0.with_vector(vec), *train_windows[i], init_vel_var, n_params)
                    for i in batch
                )
            )
            if not np.all(np.isfinite(losses)):
                history.diverged = True
                return params0.with_vector(best_vec), history
            g = np.mean(grads, axis=0)
            norm = float(np.linalg.norm(g))
            if norm > config.grad_clip:
                g = g * (config.grad_clip / norm)
            step += 1
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1**step)
            v_hat = v / (1.0 - beta2**step)
            vec = vec - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * vec
        val_nll = snapshot(epoch)
        if val_nll < best_val:
            best_val = val_nll
            best_vec = vec.copy()
            best_epoch = epoch

    history.meta["best_val_nll"] = best_val
    history.meta["best_epoch"] = best_epoch
    return params0.with_vector(best_vec), history
