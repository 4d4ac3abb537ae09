"""Central-difference gradient verification against the reverse-mode sweep."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError
from .params import ParameterRegistry
from .tensor import Tensor, backward, no_grad


def finite_diff_check(
    f: Callable[[], Tensor],
    registry: ParameterRegistry,
    eps: float = 1e-5,
    coords_per_param: int = 4,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic zero-argument closure that runs a forward
    pass over the registry's current values and returns a scalar loss tensor.
    The error at a coordinate is |analytic - fd| / max(|analytic|, |fd|, 1e-8),
    except that coordinates where both magnitudes sit at or below the 1e-8
    floor count as exact agreement (a structurally zero gradient measured
    against central-difference roundoff carries no information).  The maximum
    over all sampled coordinates is returned.  Requires a float64 registry;
    eps must lie in [1e-7, 1e-3].
    """
    if registry.dtype != np.float64:
        raise ContractError("finite_diff_check requires a float64 registry")
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps {eps} outside [1e-7, 1e-3]")

    with no_grad():
        base_a = f().item()
        base_b = f().item()
    if base_a != base_b:
        raise ContractError(
            f"f is not deterministic: repeated evaluations gave {base_a} and {base_b}"
        )

    registry.zero_grads()
    loss = f()
    backward(loss)
    analytic = {
        p.name: (np.zeros_like(p.tensor.data) if p.tensor.grad is None else p.tensor.grad.copy())
        for p in registry.trainable_parameters()
    }
    registry.zero_grads()

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    worst = 0.0
    for param in registry.trainable_parameters():
        flat = param.tensor.data.reshape(-1)
        size = flat.size
        if size == 0:
            continue
        k = min(size, max(1, coords_per_param))
        coords = rng.choice(size, size=k, replace=False) if k < size else np.arange(size)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                plus = f().item()
                flat[i] = orig - eps
                minus = f().item()
            flat[i] = orig
            fd = (plus - minus) / (2.0 * eps)
            a = float(analytic[param.name].reshape(-1)[i])
            if abs(a) <= 1e-8 and abs(fd) <= 1e-8:
                continue
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, rel)
    return worst
