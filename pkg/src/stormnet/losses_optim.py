"""Loss functions with analytic gradients, and the three optimizers.

Every loss returns (value, grad) where the value is the mean over all
elements and grad is d(value)/d(prediction). Cross-entropy predictions
are clamped to [1e-12, 1 - 1e-12] before the log so the value stays
finite. Optimizer updates are applied in place; the descent direction
is theta <- theta - lr * step.
"""

import numpy as np

from .errors import NumericError, ShapeError

LOSSES = ("mse", "mae", "bce", "cce", "weighted_bce")
PROB_CLAMP = 1e-12


def loss_and_grad(kind: str, y_hat, y, pos_weight: float = None):
    """Evaluate a loss and its gradient w.r.t. y_hat."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeError(f"loss: prediction shape {y_hat.shape} != target shape {y.shape}")
    n = y_hat.size
    if kind == "mse":
        diff = y_hat - y
        return float(np.mean(diff * diff)), 2.0 * diff / n
    if kind == "mae":
        diff = y_hat - y
        return float(np.mean(np.abs(diff))), np.sign(diff) / n
    if kind == "bce":
        # same expression tree as weighted_bce so pos_weight=1 is bit-equal
        return _cross_entropy(y_hat, y, 1.0, n)
    if kind == "weighted_bce":
        if pos_weight is None or pos_weight <= 0:
            raise ValueError("weighted_bce requires a positive pos_weight")
        return _cross_entropy(y_hat, y, pos_weight, n)
    if kind == "cce":
        p = np.clip(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
        value = -np.mean(y * np.log(p))
        grad = -(y / p) / n
        return float(value), grad
    raise ValueError(f"unknown loss {kind!r}")


def _cross_entropy(y_hat, y, pos_weight, n):
    p = np.clip(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    value = -np.mean(pos_weight * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (-pos_weight * y / p + (1.0 - y) / (1.0 - p)) / n
    return float(value), grad


class Optimizer:
    """Base: in-place parameter updates with lazily created state."""

    kind = "base"

    def __init__(self, lr: float):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.t = 0
        self.state = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for name, theta in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            self._update(name, theta, g)

    def _update(self, name, theta, g):
        raise NotImplementedError

    def state_arrays(self) -> dict:
        """Flat name -> array view of the moment state, for checkpoints."""
        out = {}
        for pname, slots in self.state.items():
            for slot, arr in slots.items():
                out[f"{pname}::{slot}"] = arr
        return out

    def load_state(self, arrays: dict, t: int) -> None:
        self.t = t
        self.state = {}
        for key, arr in arrays.items():
            pname, slot = key.rsplit("::", 1)
            self.state.setdefault(pname, {})[slot] = np.array(arr)


class SGD(Optimizer):
    kind = "sgd"

    def _update(self, name, theta, g):
        theta -= self.lr * g


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def _update(self, name, theta, g):
        slots = self.state.setdefault(
            name, {"m": np.zeros_like(theta), "v": np.zeros_like(theta)}
        )
        m, v = slots["m"], slots["v"]
        m += (1.0 - self.beta1) * (g - m)
        v += (1.0 - self.beta2) * (g * g - v)
        m_hat = m / (1.0 - self.beta1 ** self.t)
        v_hat = v / (1.0 - self.beta2 ** self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class RMSprop(Optimizer):
    kind = "rmsprop"

    def __init__(self, lr: float = 1e-3, rho: float = 0.9, eps: float = 1e-8):
        super().__init__(lr)
        self.rho = rho
        self.eps = eps

    def _update(self, name, theta, g):
        slots = self.state.setdefault(name, {"v": np.zeros_like(theta)})
        v = slots["v"]
        v += (1.0 - self.rho) * (g * g - v)
        theta -= self.lr * g / (np.sqrt(v) + self.eps)


def make_optimizer(kind: str, lr: float) -> Optimizer:
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr)
    if kind == "rmsprop":
        return RMSprop(lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def finite_difference_check(f, theta, analytic_g, h: float = 1e-6) -> float:
    """Max relative error between central differences of f and analytic_g.

    f takes theta (mutated in place during probing, restored after) and
    returns a scalar. The relative error per element is
    |g_fd - g_an| / max(1e-8, |g_fd| + |g_an|).
    """
    theta = np.asarray(theta)
    flat = theta.ravel()
    g_an = np.asarray(analytic_g).ravel()
    worst = 0.0
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        fp = f(theta)
        flat[i] = saved - h
        fm = f(theta)
        flat[i] = saved
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("finite_difference_check: non-finite objective value")
        g_fd = (fp - fm) / (2.0 * h)
        err = abs(g_fd - g_an[i]) / max(1e-8, abs(g_fd) + abs(g_an[i]))
        if err > worst:
            worst = err
    return worst
