"""Adam optimizer over FcnParams snapshots.

Weight decay is applied as a plain additive L2 term on the gradient
(``g + wd * theta``) before the moment updates — the classic (non-decoupled)
formulation.  States and parameter snapshots are immutable; each step
returns fresh ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fcn import FcnParams


@dataclass(frozen=True)
class AdamState:
    step: int
    m: dict
    v: dict


def init_adam_state(params: FcnParams) -> AdamState:
    zeros = {k: np.zeros_like(arr) for k, arr in params.tensors.items()}
    return AdamState(0, zeros, {k: v.copy() for k, v in zeros.items()})


def adam_step(params: FcnParams, grads: dict, state: AdamState, cfg) -> tuple:
    """One bias-corrected Adam update.

    ``cfg`` provides learning_rate, weight_decay, beta1, beta2 and
    adam_epsilon (duck-typed; see TrainConfig).  Returns
    ``(new_params, new_state)``.
    """
    if set(grads) != set(params.tensors):
        raise ValueError("gradient keys do not match parameter keys")
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_t, new_m, new_v = {}, {}, {}
    for key, theta in params.tensors.items():
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {key} has shape {g.shape}, expected {theta.shape}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        m = b1 * state.m[key] + (1.0 - b1) * g
        v = b2 * state.v[key] + (1.0 - b2) * g * g
        new_m[key] = m
        new_v[key] = v
        new_t[key] = theta - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_epsilon)
    return FcnParams(params.config, new_t), AdamState(t, new_m, new_v)
