"""Central-difference verification of autograd gradients."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericError
from .params import ParamStore
from .rng import Rng
from .tensor import no_grad

PRECISIONS = ("float32", "float64")


def _loss_value(loss_fn, store):
    with no_grad():
        loss = loss_fn(store)
    value = float(np.asarray(loss.data, dtype=np.float64).reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericError(f"loss is not finite ({value})")
    return value


def _analytic(loss_fn, params, dtype):
    store = params.copy(dtype)
    store.zero_grad()
    loss = loss_fn(store)
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    loss.backward()
    return {n: (np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64))
            for n, t in store.items()}


def gradient_errors(loss_fn, params: ParamStore, epsilon: float = 1e-3,
                    precisions=PRECISIONS, max_coords: int | None = None,
                    rng: Rng | None = None, kink_tol: float = 1e-3, names=None) -> dict:
    """Max relative gradient error for each requested precision.

    The numeric side is the fourth-order central difference (stencil at
    ±eps and ±2 eps) evaluated on a 64-bit copy of the parameters; it is
    shared by all precisions. ``"float32"`` checks the 32-bit autograd path,
    ``"float64"`` the same graph run on 64-bit values. ``max_coords`` caps
    the coordinates probed per tensor (sampled with ``rng``).

    Coordinates whose stencil straddles a kink (relu, max) are skipped: there
    the central differences at eps and 2 eps, or the second-order forward
    and backward differences, disagree by more than ``kink_tol`` relative. The result carries ``"probed"`` and ``"kinks"``
    counts next to the per-precision errors. ``names`` restricts the probed
    tensors.
    """
    if not 1e-5 <= epsilon <= 1e-3:
        raise ContractError(f"epsilon must lie in [1e-5, 1e-3], got {epsilon}")
    for p in precisions:
        if p not in PRECISIONS:
            raise ContractError(f"unknown precision {p!r}")
    rng = rng or Rng(0)
    analytic = {p: _analytic(loss_fn, params, np.dtype(p)) for p in precisions}

    probe = params.copy(np.float64)
    worst = {p: 0.0 for p in precisions}
    probed = kinks = 0
    for name, tensor in probe.items():
        if names is not None and name not in names:
            continue
        flat = tensor.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.child(name).choice(flat.size, max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            vals = []
            for k in (2, 1, 0, -1, -2):
                flat[i] = orig + k * epsilon
                vals.append(_loss_value(loss_fn, probe))
            flat[i] = orig
            probed += 1
            d1 = (vals[1] - vals[3]) / (2 * epsilon)
            d2 = (vals[0] - vals[4]) / (4 * epsilon)
            # one-sided slopes see a kink sitting right at the centre, which
            # the two symmetric ones cannot
            fwd = (-3 * vals[2] + 4 * vals[1] - vals[0]) / (2 * epsilon)
            bwd = (3 * vals[2] - 4 * vals[3] + vals[4]) / (2 * epsilon)
            if (abs(d1 - d2) > kink_tol * max(abs(d1), abs(d2)) + 1e-10
                    or abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd)) + 1e-10):
                kinks += 1
                continue
            numeric = (-vals[0] + 8 * vals[1] - 8 * vals[3] + vals[4]) / (12 * epsilon)
            for p in precisions:
                a = analytic[p][name].reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst[p] = max(worst[p], err)
    worst.update(probed=probed, kinks=kinks)
    return worst


def finite_diff_check(loss_fn, params: ParamStore, epsilon: float = 1e-3,
                      precision: str = "float64", max_coords: int | None = None,
                      rng: Rng | None = None) -> float:
    """Max over probed coordinates of |a - n| / max(|a|, |n|, 1e-8)."""
    return gradient_errors(loss_fn, params, epsilon, (precision,), max_coords, rng)[precision]
