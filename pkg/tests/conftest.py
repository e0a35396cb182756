from __future__ import annotations

import numpy as np
import pytest

from guardmerge.tensor_store import TensorMap


def random_tensor_map(rng: np.random.Generator, n_tensors: int | None = None,
                      max_elements: int = 16, scale: float = 2.0,
                      names: list[str] | None = None) -> TensorMap:
    """Small random checkpoint with mixed tensor shapes."""
    if names is None:
        count = n_tensors if n_tensors is not None else int(rng.integers(1, 4))
        names = [f"layer.{i}.weight" for i in range(count)]
    entries = {}
    for name in names:
        size = int(rng.integers(1, max_elements + 1))
        if size > 1 and rng.random() < 0.5:
            shape = (size,)
        elif size > 1 and size % 2 == 0:
            shape = (2, size // 2)
        else:
            shape = (size,)
        entries[name] = (rng.standard_normal(shape) * scale).astype(np.float32)
    return TensorMap(entries)


def map_to_flat_lists(tmap: TensorMap) -> dict[str, list[float]]:
    """Extract the exact float32 values as plain Python floats."""
    return {name: [float(v) for v in arr.ravel()] for name, arr in tmap.items()}


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
