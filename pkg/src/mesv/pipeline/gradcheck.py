"""Analytic-vs-finite-difference gradient comparison."""

from dataclasses import dataclass

import numpy as np

from ..numkernel.tensor import Tape


@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def ok(self):
        return self.max_error < self.tolerance

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in sorted(self.errors.items())]
        return "\n".join(lines + [f"max {self.max_error:.3e} (tol {self.tolerance:g})"])


def grad_check(closure, params, tolerance=1e-4, h=1e-5, max_elements=None, rng=None,
               floor=1e-8):
    """Compare tape gradients with central differences for each named parameter.

    ``closure()`` must rebuild the forward pass and return a scalar tensor.
    The error of a parameter is ``max|analytic - numeric|`` divided by the
    larger of the two gradients' max-norms, or by ``floor`` when both are
    smaller (a parameter with an identically zero gradient, such as a softmax
    shift, would otherwise divide rounding noise by rounding noise).
    ``max_elements`` caps the number of (randomly chosen) entries probed per
    parameter.
    """
    with Tape() as tape:
        loss = closure()
    grads = tape.backward(loss)
    analytic = {name: grads.get(p, np.zeros_like(p.data)) for name, p in params.items()}
    rng = np.random.default_rng(0) if rng is None else rng
    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.zeros(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = closure().item()
            flat[i] = orig - h
            down = closure().item()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * h)
        a = analytic[name].reshape(-1)[idx]
        scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(numeric), initial=0.0))
        diff = np.max(np.abs(a - numeric), initial=0.0)
        errors[name] = diff / max(scale, floor)
    return GradCheckReport(errors, tolerance)
