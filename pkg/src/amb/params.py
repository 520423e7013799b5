"""Named parameter registry with a per-tensor trainable flag."""
from collections import OrderedDict

import numpy as np
from scipy.stats import truncnorm

from .tensor import Tensor


def truncated_normal(rng, shape, std, dtype=np.float32):
    """Normal(0, std) truncated at two standard deviations (BERT initialiser)."""
    values = truncnorm.rvs(-2.0, 2.0, size=shape, random_state=rng)
    return (values * std).astype(dtype)


class ParameterSet:
    """Ordered ``name -> Tensor`` registry plus a ``name -> trainable`` freeze mask.

    Freezing is enforced through ``requires_grad``: a frozen tensor is never put
    on the tape as something that needs a gradient, so it never gets a grad
    buffer and the optimiser has nothing to apply to it.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = dtype
        self._tensors = OrderedDict()
        self.mask = {}

    def add(self, name, values):
        if name in self._tensors:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(np.array(values, dtype=self.dtype), requires_grad=True)
        self._tensors[name] = t
        self.mask[name] = True
        return t

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self, prefix=""):
        return [n for n in self._tensors if n.startswith(prefix)]

    def shapes(self):
        return {n: t.shape for n, t in self._tensors.items()}

    def apply_mask(self, mask):
        missing = set(self._tensors) - set(mask)
        if missing:
            raise KeyError(f"freeze mask lacks entries for {sorted(missing)[:3]}")
        self.mask = dict(mask)
        for name, t in self._tensors.items():
            t.requires_grad = bool(mask[name])
            if not t.requires_grad:
                t.grad = None

    def trainable(self):
        return [(n, t) for n, t in self._tensors.items() if self.mask[n]]

    def zero_grad(self):
        for _, t in self.trainable():
            t.zero_grad()

    def snapshot(self):
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def restore(self, arrays):
        for n, arr in arrays.items():
            self._tensors[n].data[...] = arr

    def arrays(self):
        return {n: t.data for n, t in self._tensors.items()}
