"""Adam optimizer over a ParamStore."""

from dataclasses import dataclass, field

import numpy as np

from molview.autodiff import ParamStore, Tensor
from molview.errors import GradientError, ShapeError


@dataclass
class AdamState:
    """First/second moments per parameter name plus the step counter."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def fresh(cls, params: ParamStore, lr: float = 1e-3) -> "AdamState":
        """Zero moments shaped like every parameter in ``params``."""
        return cls(
            lr=lr,
            m={name: np.zeros(t.shape) for name, t in params.items()},
            v={name: np.zeros(t.shape) for name, t in params.items()},
        )

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AdamState):
            return NotImplemented
        return (
            self.hyper() == other.hyper()
            and _arrays_equal(self.m, other.m)
            and _arrays_equal(self.v, other.v)
        )

    __hash__ = None


def _arrays_equal(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def adam_step(params: ParamStore, grads: dict[str, Tensor], state: AdamState) -> AdamState:
    """One bias-corrected Adam update of every parameter, in place.

    Raises:
        GradientError: a parameter has no gradient or a non-finite one
    """
    for name, param in params.items():
        if name not in grads:
            raise GradientError(f"no gradient for parameter {name!r}")
        g = grads[name].data
        if g.shape != param.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {param.shape}")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name!r}")
    if params.names() != sorted(state.m):
        missing = sorted(set(params.names()) ^ set(state.m))
        raise ShapeError(f"optimizer state does not match parameters: {', '.join(missing)}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, param in params.items():
        g = grads[name].data
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        state.m[name] = m
        state.v[name] = v
        params.assign(name, param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return state
