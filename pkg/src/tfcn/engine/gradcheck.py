"""Finite-difference verification of analytic gradients.

The probe perturbs float32 values in place and forms the central difference
quotient in float64; everything under test stays in 32-bit arithmetic.
"""

from __future__ import annotations

import numpy as np

FLOOR = 1e-8


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def grad_check(f, params, step: float = 1e-3, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and numeric gradients.

    ``f()`` evaluates the graph fresh and returns ``(loss, grads)`` where
    ``grads`` maps parameter names to arrays; ``params`` maps the same names
    to the float32 arrays that f reads (perturbed in place here). When
    ``max_coords`` is set, that many coordinates are sampled per parameter
    with ``rng``; otherwise every coordinate is probed.
    """
    loss, grads = f()
    if not np.isfinite(loss):
        raise ValueError("non-finite loss at the unperturbed point")
    worst = 0.0
    for name, array in params.items():
        if name not in grads:
            raise KeyError(f"f() returned no gradient for parameter {name!r}")
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        flat = array.reshape(-1)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                raise ValueError("max_coords sampling needs an rng")
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        else:
            coords = range(flat.size)
        for i in coords:
            keep = flat[i].item()
            flat[i] = np.float32(keep + step)
            hi, _ = f()
            flat[i] = np.float32(keep - step)
            lo, _ = f()
            flat[i] = np.float32(keep)
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise ValueError(f"non-finite loss while probing {name}[{i}]")
            numeric = (float(hi) - float(lo)) / (2.0 * step)
            worst = max(worst, relative_error(analytic[i], numeric))
    return worst
