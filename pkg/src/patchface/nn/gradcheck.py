"""Finite-difference gradient checking.

All differencing runs in float64 regardless of the production dtype:
the caller's arrays are promoted before perturbing, and the central
difference (f(w+h) - f(w-h)) / 2h is accumulated at full precision.

The network is only piecewise smooth (max pooling, ReLU, and the hinged
triplet selection all introduce kinks), so a finite step can straddle a
non-differentiable boundary where the difference quotient estimates
nothing.  Composite checks therefore gate every probe on an "activation
signature": if perturbing an entry by +-h changes any pool argmax, ReLU
mask, or triplet validity bit, that probe is discarded rather than
compared.  Deviations are measured against the largest gradient
magnitude seen anywhere in the check, which keeps identically-zero
gradients (e.g. a conv bias that batch norm cancels) from dividing
noise by noise.
"""

from __future__ import annotations

import numpy as np

from .network import LEARNABLE, NetworkParams


class GradientCheckFailure(AssertionError):
    pass


def relative_error(analytic, numeric) -> float:
    """Largest absolute deviation relative to the largest gradient magnitude."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - b).max() / scale)


def numerical_gradient(f, arrays, step: float = 1e-3):
    """Central differences of the scalar f() w.r.t. each array's entries.

    f is re-evaluated with entries perturbed in place, so the arrays must
    be the exact objects f reads.  They should be float64 for the
    advertised accuracy.  Returns one float64 gradient per array.
    """
    grads = []
    for arr in arrays:
        flat = arr.reshape(-1)
        g = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f())
            flat[i] = orig - step
            fm = float(f())
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * step)
        grads.append(g.reshape(arr.shape))
    return grads


def gradient_check(params: NetworkParams, x, loss_fn, step: float = 1e-3,
                   tolerance: float | None = None,
                   samples_per_tensor: int | None = None,
                   seed: int = 0) -> float:
    """Compare loss_fn's analytic parameter gradients to finite differences.

    loss_fn(params, x, with_grads) must return (loss, grads, signature):
    a scalar, a ParamGrads (may be None when with_grads is False), and a
    hashable activation signature.  It must be a pure function of the
    learnable tensors; batch-norm running statistics may drift across
    evaluations since they do not enter training-mode losses.

    samples_per_tensor limits how many entries of each tensor are probed
    (chosen by a seeded rng); None probes every entry.  Returns the max
    relative error over all valid probes; raises GradientCheckFailure if
    a tolerance is given and exceeded.
    """
    p64 = params.astype(np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    _, analytic, sig0 = loss_fn(p64, x64, with_grads=True)
    rng = np.random.default_rng(seed)
    scale = max(
        np.abs(getattr(analytic, name)).max(initial=0.0) for name in LEARNABLE
    )
    worst_dev = 0.0
    checked = 0
    for name in LEARNABLE:
        arr = getattr(p64, name)
        flat = arr.reshape(-1)
        ana = np.asarray(getattr(analytic, name), dtype=np.float64).reshape(-1)
        if samples_per_tensor is None or flat.size <= samples_per_tensor:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, samples_per_tensor, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            lp, _, sp = loss_fn(p64, x64, with_grads=False)
            flat[i] = orig - step
            lm, _, sm = loss_fn(p64, x64, with_grads=False)
            flat[i] = orig
            if sp != sig0 or sm != sig0:
                continue  # probe crossed a kink; not a derivative estimate
            num = (float(lp) - float(lm)) / (2.0 * step)
            worst_dev = max(worst_dev, abs(ana[i] - num))
            scale = max(scale, abs(num))
            checked += 1
    if checked == 0:
        raise GradientCheckFailure("every finite-difference probe crossed a kink")
    err = 0.0 if scale == 0.0 else worst_dev / scale
    if tolerance is not None and err > tolerance:
        raise GradientCheckFailure(
            f"max relative error {err:.3e} exceeds tolerance {tolerance:.3e}"
        )
    return err
