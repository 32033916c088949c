from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, zero_grad


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = 24,
    seed: int = 0,
    floor: float = 1e-8,
    kink_tol: float | None = None,
    stats: dict | None = None,
) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn`` takes no arguments and must read ``params`` by reference;
    coordinates are perturbed in place and restored. At most ``max_coords``
    coordinates per parameter are checked (chosen with a seeded RNG). Returns
    the max over checked coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.

    Relu kinks make the central difference meaningless. With ``kink_tol``
    set, a coordinate whose forward and backward one-sided slopes differ by
    more than ``kink_tol`` relative is skipped as non-smooth. ``stats``, if
    given, receives the ``checked`` and ``skipped`` counts.
    """
    zero_grad(params)
    grads = backward(loss_fn())
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = skipped = 0
    base = float(loss_fn().data) if kink_tol is not None else 0.0
    for p in params:
        analytic = grads.get(p)
        analytic = np.zeros_like(p.data) if analytic is None else analytic.copy()
        flat = p.data.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = float(loss_fn().data)
            flat[c] = orig - eps
            down = float(loss_fn().data)
            flat[c] = orig
            numeric = (up - down) / (2 * eps)
            if kink_tol is not None:
                fwd, bwd = (up - base) / eps, (base - down) / eps
                if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), floor):
                    skipped += 1
                    continue
            a = float(analytic.reshape(-1)[c])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
            checked += 1
    zero_grad(params)
    if stats is not None:
        stats.update(checked=checked, skipped=skipped)
    return worst
