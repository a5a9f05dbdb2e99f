"""Central finite-difference gradient verification.

`check_gradients` compares tape gradients of a scalar-valued function against
central differences. `GRADCHECK_SUITES` is the registry the CLI `grad-check`
command and the acceptance suite both run; each entry returns the worst
relative error observed for one operation family.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor, backward


def numeric_gradient(fn: Callable[[], float], t: Tensor, h: float,
                     probes: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of fn w.r.t. selected flat coordinates of t.

    Mutates t.data in place around each probe and restores it; fn must re-read
    t on every call.
    """
    flat_idx = range(t.size) if probes is None else probes
    grad = np.zeros(t.size, dtype=np.float64)
    t.data.flags.writeable = True
    try:
        flat = t.data.reshape(-1)
        for i in flat_idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            grad[i] = (fp - fm) / (2.0 * h)
    finally:
        t.data.flags.writeable = False
    return grad.reshape(t.shape)


def check_gradients(build_loss: Callable[[], Tensor], params: Dict[str, Tensor],
                    h: float = 1e-3, probes_per_tensor: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between analytic and numeric gradients.

    ``build_loss`` evaluates the scalar loss from the current values of
    ``params``. With ``probes_per_tensor`` set, only that many randomly chosen
    coordinates per tensor are differenced (for large composite graphs).
    """
    for t in params.values():
        t.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    backward(loss, tape, wrt=params.values())

    def loss_value() -> float:
        return build_loss().item()

    worst = 0.0
    for name, t in params.items():
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        if probes_per_tensor is None or probes_per_tensor >= t.size:
            probes = None
        else:
            r = rng or np.random.default_rng(0)
            probes = sorted(r.choice(t.size, size=probes_per_tensor, replace=False).tolist())
        numeric = numeric_gradient(loss_value, t, h, probes)
        idx = range(t.size) if probes is None else probes
        a = np.asarray(analytic, dtype=np.float64).reshape(-1)
        n = numeric.reshape(-1)
        for i in idx:
            denom = max(abs(a[i]), abs(n[i]), 1.0)
            worst = max(worst, abs(a[i] - n[i]) / denom)
    return worst


# ---------------------------------------------------------------------------
# Registered suites (populated lazily to avoid import cycles)

GRADCHECK_SUITES: Dict[str, Callable[[], float]] = {}


def register_suite(name: str):
    def deco(fn):
        GRADCHECK_SUITES[name] = fn
        return fn
    return deco


def run_all_suites() -> Dict[str, float]:
    """Run every registered suite in float64; returns name -> max rel error."""
    from . import gradcheck_suites  # noqa: F401  (registration side effect)

    results = {}
    with T.precision("float64"):
        for name in sorted(GRADCHECK_SUITES):
            results[name] = GRADCHECK_SUITES[name]()
    return results
