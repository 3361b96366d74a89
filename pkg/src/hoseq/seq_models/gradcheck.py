"""Central-difference verification of the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..feature_pipeline import ClassWeights
from .nets import forward_batch
from .params import ModelKind, init_params
from .training import Batch, loss_and_grad, loss_terms

FD_EPS = 1e-5


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    worst_tensor: str
    n_entries: int


def _objective(params, batch, weights, lambda_pp) -> float:
    out, _ = forward_batch(params, batch.X)
    sq, bce, _ = loss_terms(out, batch, weights, lambda_pp)
    return float(np.mean(sq + lambda_pp * bce))


def grad_check_report(kind: ModelKind | str, dims: tuple[int, int, int] = (4, 8, 6), seed: int = 1,
                      n_examples: int = 3, eps: float = FD_EPS) -> GradCheckReport:
    """Compare analytic gradients with central differences on every parameter entry.

    ``dims`` is (input_dim F, hidden_dim H, seq_len L).  Dropout is off; the
    batch mixes both classes under unequal class weights so both loss terms
    contribute.
    """
    f, h, steps = dims
    rng = np.random.default_rng(seed)
    params = init_params(kind, f, h, steps, rng)
    pp = np.arange(n_examples) % 2 == 0
    batch = Batch(rng.uniform(0.0, 1.0, size=(n_examples, steps, f)),
                  rng.uniform(0.5, 30.0, size=n_examples), pp)
    weights = ClassWeights({0: 0.75, 1: 1.5})
    lambda_pp = 1.0

    _, analytic = loss_and_grad(params, batch, weights, lambda_pp)
    worst_rel, worst_abs, worst_name, count = 0.0, 0.0, "", 0
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        ga = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = _objective(params, batch, weights, lambda_pp)
            flat[k] = orig - eps
            down = _objective(params, batch, weights, lambda_pp)
            flat[k] = orig
            gn = (up - down) / (2.0 * eps)
            diff = abs(ga[k] - gn)
            rel = diff / max(1e-8, abs(ga[k]) + abs(gn))
            if rel > worst_rel:
                worst_rel, worst_name = rel, name
            worst_abs = max(worst_abs, diff)
            count += 1
    return GradCheckReport(worst_rel, worst_abs, worst_name, count)


def grad_check(kind: ModelKind | str, dims: tuple[int, int, int] = (4, 8, 6), seed: int = 1) -> float:
    """Max over all entries of |g_a - g_n| / max(1e-8, |g_a| + |g_n|)."""
    return grad_check_report(kind, dims, seed).max_rel_error
