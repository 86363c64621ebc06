"""Named parameter and buffer store with prefix freezing.

Trainable parameters live under unique dotted names (e.g. ``ecam.0.jfe.down.weight``);
buffers hold non-trainable state such as batch-norm running statistics. A set of
frozen name prefixes excludes parameters from gradient computation and from
optimizer updates, which keeps their bytes untouched through any number of steps.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class ParamStore:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}

    def param(self, name, array):
        """Register a trainable parameter; returns its Tensor."""
        if name in self._params or name in self._buffers:
            raise ContractError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(array, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def buffer(self, name, array):
        """Register a non-trainable named array (updated in place by layers)."""
        if name in self._params or name in self._buffers:
            raise ContractError(f"duplicate buffer name: {name}")
        arr = np.ascontiguousarray(array, dtype=np.float64)
        self._buffers[name] = arr
        return arr

    def remove_prefix(self, prefix):
        """Drop every param/buffer under `prefix` (used when fusing the head)."""
        self._params = {k: v for k, v in self._params.items() if not k.startswith(prefix)}
        self._buffers = {k: v for k, v in self._buffers.items() if not k.startswith(prefix)}

    # -- freezing ----------------------------------------------------------

    def freeze(self, prefixes):
        """Freeze all parameters under the given prefixes."""
        for name, t in self._params.items():
            t.requires_grad = not any(name.startswith(p) for p in prefixes)

    def freeze_all_except(self, keep_prefix):
        """Freeze everything but names under `keep_prefix`."""
        for name, t in self._params.items():
            t.requires_grad = name.startswith(keep_prefix)

    def unfreeze_all(self):
        for t in self._params.values():
            t.requires_grad = True

    def is_frozen(self, name):
        return not self._params[name].requires_grad

    # -- access ------------------------------------------------------------

    def names(self, prefix=""):
        return sorted(n for n in self._params if n.startswith(prefix))

    def get(self, name):
        return self._params[name]

    def items(self, prefix=""):
        for n in self.names(prefix):
            yield n, self._params[n]

    def trainable(self):
        """(name, tensor) pairs that the optimizer may update."""
        for n in sorted(self._params):
            t = self._params[n]
            if t.requires_grad:
                yield n, t

    def buffers(self, prefix=""):
        for n in sorted(self._buffers):
            if n.startswith(prefix):
                yield n, self._buffers[n]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def count(self, prefix=""):
        """Total element count of parameters under `prefix` (buffers excluded)."""
        return sum(t.size for n, t in self.items(prefix))

    # -- serialization support ----------------------------------------------

    def state_arrays(self):
        """All named arrays (params then buffers) for the weights container."""
        out = {n: t.data for n, t in self._params.items()}
        out.update(self._buffers)
        return out

    def load_state(self, arrays, ignore_prefixes=(), allow_missing=()):
        """Copy values from a name->array mapping into matching entries.

        Every store entry must be present in `arrays` with a matching shape,
        except entries under an `allow_missing` prefix, which keep their
        current values (fresh phase-2 modules loading a phase-1 checkpoint).
        Extra entries in `arrays` are rejected unless under `ignore_prefixes`.
        """
        seen = set()

        def fetch(name, shape):
            if name not in arrays:
                if any(name.startswith(p) for p in allow_missing):
                    return None
                raise ContractError(f"weights missing entry: {name}")
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != shape:
                raise ContractError(
                    f"shape mismatch for {name}: store {shape} vs file {src.shape}")
            seen.add(name)
            return src

        for name, t in self._params.items():
            src = fetch(name, t.data.shape)
            if src is not None:
                t.data = np.ascontiguousarray(src)
        for name, buf in self._buffers.items():
            src = fetch(name, buf.shape)
            if src is not None:
                buf[...] = src
        extras = [n for n in arrays
                  if n not in seen and not any(n.startswith(p) for p in ignore_prefixes)]
        if extras:
            raise ContractError(f"unknown weight entries: {sorted(extras)[:5]}")


def count_params(store, prefix=""):
    """Sum of element counts of all parameters under `prefix`."""
    return store.count(prefix)
