from __future__ import annotations


__all__ = ["MLP"]

from typing import Dict, List, Optional, Tuple

import numpy as np

from hsnerf import autodiff as ad
from hsnerf.autodiff import Operand, Tensor


class MLP:
    """Fully connected network: ReLU between layers, linear output.

    `n_layers` counts linear layers, so ``MLP(31, 64, 1, 3)`` is
    31 -> 64 -> 64 -> 1.
    """

    __slots__ = ("in_dim", "hidden", "out_dim", "layers")

    layers: List[Tuple[Tensor, Tensor]]

    def __init__(
        self,
        in_dim: int,
        hidden: int,
        out_dim: int,
        n_layers: int = 2,
        *,
        rng: Optional[np.random.Generator] = None,
        name: str = "mlp",
    ):
        if min(in_dim, hidden, out_dim, n_layers) < 1:
            raise ValueError("MLP dimensions and depth must be positive")
        self.in_dim = in_dim
        self.hidden = hidden
        self.out_dim = out_dim

        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [in_dim] + [hidden] * (n_layers - 1) + [out_dim]
        self.layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            # He-uniform
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, (fan_in, fan_out))
            b = np.zeros(fan_out)
            self.layers.append(
                (
                    ad.parameter(w, name=f"{name}.w{i}"),
                    ad.parameter(b, name=f"{name}.b{i}"),
                )
            )

    def __repr__(self) -> str:
        dims = [self.in_dim] + [w.shape[1] for w, _ in self.layers]
        return f"MLP({' -> '.join(map(str, dims))})"

    def __call__(self, x: Operand) -> Tensor:
        h = x if isinstance(x, Tensor) else ad.constant(x)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.matmul(h, w) + b
            if i < last:
                h = ad.relu(h)
        return h

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for w, b in self.layers:
            params[str(w.name)] = w
            params[str(b.name)] = b
        return params

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)
