from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..autodiff import Tensor
from ..errors import ShapeError


class Parameter(Tensor):
    """Leaf tensor that is always tracked for gradients."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Container with auto-registered parameters, buffers and submodules.

    Attribute assignment of a :class:`Parameter` or :class:`Module` registers
    it under the attribute name; buffers (non-learnable state such as running
    statistics) go through :meth:`register_buffer`.
    """

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif name in self._buffers:
            self._buffers[name] = np.asarray(value, dtype=np.float64)
            return
        object.__setattr__(self, name, value)

    def __getattr__(self, name):
        buffers = self.__dict__.get("_buffers")
        if buffers is not None and name in buffers:
            return buffers[name]
        raise AttributeError(f"{type(self).__name__} has no attribute '{name}'")

    def register_buffer(self, name: str, value) -> None:
        self._buffers[name] = np.array(value, dtype=np.float64)

    # -- traversal ------------------------------------------------------------

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        for mod_name, mod in self.named_modules():
            for name, p in mod._params.items():
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for mod_name, mod in self.named_modules():
            for name, b in mod._buffers.items():
                yield (f"{mod_name}.{name}" if mod_name else name), b

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def parameter_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters()]

    def buffer_names(self) -> list[str]:
        return [n for n, _ in self.named_buffers()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # -- state ----------------------------------------------------------------

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Copies of every parameter and buffer, keyed by dotted name."""
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, p in self.named_parameters():
            out[name] = p.data.copy()
        for name, b in self.named_buffers():
            out[name] = b.copy()
        return out

    def load_state_dict(self, state, strict: bool = True) -> None:
        own_params = dict(self.named_parameters())
        own_buffers = {}
        for mod_name, mod in self.named_modules():
            for name in mod._buffers:
                own_buffers[f"{mod_name}.{name}" if mod_name else name] = (mod, name)
        if strict:
            missing = (set(own_params) | set(own_buffers)) - set(state)
            unexpected = set(state) - (set(own_params) | set(own_buffers))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, value in state.items():
            arr = np.array(value, dtype=np.float64)
            if name in own_params:
                p = own_params[name]
                if arr.shape != p.data.shape:
                    raise ShapeError(f"load_state_dict[{name}]", p.data.shape, arr.shape)
                p.data = arr
            elif name in own_buffers:
                mod, bname = own_buffers[name]
                if arr.shape != mod._buffers[bname].shape:
                    raise ShapeError(f"load_state_dict[{name}]", mod._buffers[bname].shape, arr.shape)
                mod._buffers[bname] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
