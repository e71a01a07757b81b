"""Parameter containers with dotted-name traversal."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from dmae.tensor.core import DEFAULT_DTYPE, Tensor


def parameter(data, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


class Module:
    """Base class: any attribute that is a requires-grad Tensor, a Module, or a
    list of Modules is discovered by :meth:`named_parameters`."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if strict and missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, arr in state.items():
            if name not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            target = own[name]
            if tuple(arr.shape) != target.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {target.shape}")
            target.data = np.array(arr, dtype=target.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (used for float64 gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())
