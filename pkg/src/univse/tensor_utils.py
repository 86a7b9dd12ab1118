"""Small torch helpers shared across encoder modules.

All model math runs in float64 on CPU; single precision is opt-in via the
trainer config and never used by the test suite.
"""

from __future__ import annotations

import numpy as np
import torch

DEGENERATE_NORM = 1e-12


class DegenerateEmbeddingError(ValueError):
    """Raised when a vector about to be L2-normalized has a vanishing norm."""


def to_tensor(x, dtype=torch.float64) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def l2_normalize(x: torch.Tensor, *, what: str = "embedding") -> torch.Tensor:
    """Normalize along the last dim, rejecting near-zero inputs.

    The norm check reads concrete values, so it must not be reached by
    second-order autograd; plain reverse mode is unaffected.
    """
    norms = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    if bool((norms < DEGENERATE_NORM).any()):
        raise DegenerateEmbeddingError(f"degenerate {what}: norm below {DEGENERATE_NORM}")
    return x / norms


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> torch.Tensor:
    arr = rng.uniform(-scale, scale, size=shape)
    t = torch.from_numpy(arr)
    t.requires_grad_(True)
    return t


def glorot_scale(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))
