"""Central finite-difference oracle for checking tape gradients.

The oracle only ever calls the forward function; it never looks at backward
rules, so it stays independent of the code path it verifies.
"""
import numpy as np

from .tensor import backward


def numerical_grad(fn, tensor, step=1e-5, indices=None):
    """d fn() / d tensor by central differences, perturbing ``tensor.data`` in place.

    ``indices`` restricts the probe to a subset of flat positions; the others are
    left as NaN.
    """
    flat = tensor.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        orig = flat[i]
        flat[i] = orig + step
        plus = float(fn().data)
        flat[i] = orig - step
        minus = float(fn().data)
        flat[i] = orig
        out[i] = (plus - minus) / (2 * step)
    return out.reshape(tensor.shape)


def directional_grad(fn, tensor, direction, step=1e-5):
    """Central difference of fn along ``direction`` (same shape as ``tensor``)."""
    orig = tensor.data.copy()
    tensor.data[...] = orig + step * direction
    plus = float(fn().data)
    tensor.data[...] = orig - step * direction
    minus = float(fn().data)
    tensor.data[...] = orig
    return (plus - minus) / (2 * step)


def relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(max |n|, max |a|, floor), i.e. error relative to the gradient's scale.

    ``floor`` keeps gradients that are zero in exact arithmetic (e.g. a key bias
    under softmax shift invariance) from dividing round-off by round-off.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max(), floor)
    return float(np.abs(a - n).max() / scale)


def analytic_grads(fn, tensors):
    for t in tensors:
        t.grad = None
    backward(fn())
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def check_gradients(fn, tensors, step=1e-5, max_scalars=None, seed=0):
    """Compare backward() against central differences for every tensor in ``tensors``.

    With ``max_scalars`` set, each tensor is probed at that many random positions
    plus one random direction covering all of its entries. Returns a list of
    relative errors, one per tensor.
    """
    grads = analytic_grads(fn, tensors)
    rng = np.random.default_rng(seed)
    errors = []
    for t, g in zip(tensors, grads):
        if max_scalars is None or t.data.size <= max_scalars:
            errors.append(relative_error(g, numerical_grad(fn, t, step)))
            continue
        idx = rng.choice(t.data.size, size=max_scalars, replace=False)
        err = relative_error(g, numerical_grad(fn, t, step, indices=idx))
        direction = rng.standard_normal(t.shape)
        num = directional_grad(fn, t, direction, step)
        ana = float((g * direction).sum())
        denom = max(abs(num), abs(ana), float(np.linalg.norm(g)), 1e-6)
        err = max(err, abs(num - ana) / denom)
        errors.append(err)
    return errors
