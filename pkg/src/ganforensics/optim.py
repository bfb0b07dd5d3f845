"""Adam, as a pure function over dicts of parameter arrays."""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError(f"Adam lr and eps must be positive, got lr={self.lr}, eps={self.eps}")
        for b in (self.beta1, self.beta2):
            if not 0 < b < 1:
                raise ConfigError(f"Adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")


@dataclass
class AdamState:
    m: dict = field(default_factory=OrderedDict)
    v: dict = field(default_factory=OrderedDict)
    t: int = 0
    hyper: AdamHyper = field(default_factory=AdamHyper)

    @classmethod
    def zeros_like(cls, params, hyper=None):
        return cls(
            OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
            OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
            0,
            hyper or AdamHyper(),
        )

    def describe(self):
        h = self.hyper
        return {"t": self.t, "lr": h.lr, "beta1": h.beta1, "beta2": h.beta2, "eps": h.eps}

    @classmethod
    def from_description(cls, desc, m, v):
        hyper = AdamHyper(desc["lr"], desc["beta1"], desc["beta2"], desc["eps"])
        return cls(m, v, int(desc["t"]), hyper)


def adam_step(params, grads, state, hyper=None):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    ``eps`` is added outside the square root; ``t`` in the bias correction is
    the post-increment step count. Inputs are not modified.
    """
    hyper = hyper or state.hyper
    t = state.t + 1
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    new_p, new_m, new_v = OrderedDict(), OrderedDict(), OrderedDict()
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape or state.v[k].shape != p.shape:
            raise ShapeError(f"Adam shape mismatch for {k}: param {p.shape}, grad {g.shape}")
        m = hyper.beta1 * state.m[k] + (1 - hyper.beta1) * g
        v = hyper.beta2 * state.v[k] + (1 - hyper.beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_p[k] = (p - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)).astype(p.dtype, copy=False)
        new_m[k] = m.astype(p.dtype, copy=False)
        new_v[k] = v.astype(p.dtype, copy=False)
    return new_p, AdamState(new_m, new_v, t, hyper)
