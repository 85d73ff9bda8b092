"""Loss assembly, AdamW, the toy training loop, and gradient deviation.

The deviation experiment measures, for each (mode, throw ratio), the L2
distance between the gradient of the cost-reduced pipeline and the
full-reconstruction reference gradient on the same batch, resampling
only the thrown subset across samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from . import numerics as nm
from . import tokens
from .numerics import ParameterError, Tensor, UsageError


def splitmix64(x):
    """One SplitMix64 step; maps a 64-bit state to a well-mixed output."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(master, *indices):
    """Mix a master seed with index coordinates into an independent seed."""
    s = splitmix64(master & 0xFFFFFFFFFFFFFFFF)
    for i in indices:
        s = splitmix64(s ^ (int(i) & 0xFFFFFFFFFFFFFFFF))
    return s


def masked_loss(output, targets):
    """MSE over (token, pixel) entries restricted to the loss positions."""
    if output.loss_positions.size == 0:
        raise UsageError("loss has no supervised positions")
    rows = np.asarray(targets, dtype=np.float64)[output.loss_positions]
    return nm.mse(output.predictions, Tensor(rows))


@dataclass
class OptimState:
    lr: float = 1.5e-3
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.05
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def cosine_lr(step, total_steps, base_lr, warmup_fraction=0.1):
    """Linear warmup to base_lr, then cosine decay to zero."""
    warmup = max(1, int(round(total_steps * warmup_fraction)))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    t = (step - warmup) / max(1, total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def adamw_step(params, state, lr=None):
    """Decoupled-weight-decay Adam update with bias correction, in place."""
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise UsageError(f"parameter {name!r} has no gradient")
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = p.data - lr * update - lr * state.weight_decay * p.data
    return params, state


def shared_parameter_names(params):
    """Trainable parameters present in both pipelines (aggregation excluded)."""
    return sorted(n for n in mdl.trainable_names(params) if not n.startswith("agg"))


def _flat_grads(params, names):
    return np.concatenate([params[n].grad.ravel() for n in names])


def _batch_gradient(params, batch, plans, mode, config, names, common_norm=False):
    """Batch-mean loss gradient, flattened over ``names`` in fixed order.

    With ``common_norm`` each per-image loss is a sum of squared errors
    divided by the *full* masked-token count rather than by the number of
    supervised positions.  All modes then share one normalizer, so a mode
    that supervises fewer positions simply contributes fewer terms instead
    of being rescaled into an unbiased subset mean.  Gradient-distance
    comparisons across modes are only meaningful under this common scale.
    """
    mdl.zero_grads(params)
    total = None
    for image, plan in zip(batch, plans):
        out = mdl.forward(params, image, plan, mode, config)
        patches = mdl.patchify(image, config.patch_size)
        targets = mdl.normalize_targets(patches) if config.norm_pix else patches
        loss = masked_loss(out, targets)
        if common_norm:
            loss = nm.mul(loss, out.loss_positions.size / plan.masked_indices.size)
        total = loss if total is None else nm.add(total, loss)
    total = nm.mul(total, 1.0 / len(batch))
    nm.backward(total, leaves=[params[n] for n in names])
    return _flat_grads(params, names), total.item()


@dataclass
class DeviationRow:
    mode: str
    rho_d: float
    n_samples: int
    mean_dev: float
    std_dev: float
    mean_rel_dev: float
    seed: int


@dataclass
class DeviationReport:
    rows: list
    master_seed: int
    reference_norm: float
    shared_names: list


def gradient_deviation(params, batch, ratios, modes, n_throws, master_seed, config,
                       sampling="random"):
    """Per-(mode, rho_d) statistics of the gradient L2 distance to g0.

    The base mask plan of each batch item is fixed (derived from the
    master seed); only the thrown subset is resampled ``n_throws`` times
    per configuration via per-sample SplitMix64-derived seeds.

    Every mode's loss is normalized by the full masked-token count (see
    ``_batch_gradient``), so distances to the reference gradient g0 are
    measured on a common scale.  Aggregation-only parameters are excluded
    from the comparison; they have no counterpart in g0.
    """
    if n_throws < 1:
        raise ParameterError(f"n_throws must be >= 1, got {n_throws}")
    throw = tokens.throw_random if sampling == "random" else tokens.throw_furthest
    rho_e = 0.75
    base_plans = [
        tokens.generate_mask(config.grid, rho_e, derive_seed(master_seed, 0, i))
        for i in range(len(batch))
    ]
    names = shared_parameter_names(params)
    g0, _ = _batch_gradient(params, batch, base_plans, mdl.MODE_FULL, config, names,
                            common_norm=True)
    g0_norm = float(np.linalg.norm(g0))

    rows = []
    for mode_i, mode in enumerate(modes):
        for ratio_i, rho_d in enumerate(ratios):
            devs = np.empty(n_throws)
            for j in range(n_throws):
                plans = [
                    throw(plan, rho_d, derive_seed(master_seed, 1, mode_i, ratio_i, j, i))
                    for i, plan in enumerate(base_plans)
                ]
                g, _ = _batch_gradient(params, batch, plans, mode, config, names,
                                       common_norm=True)
                devs[j] = float(np.linalg.norm(g - g0))
            rows.append(
                DeviationRow(
                    mode=mode,
                    rho_d=float(rho_d),
                    n_samples=n_throws,
                    mean_dev=float(devs.mean()),
                    std_dev=float(devs.std()),
                    mean_rel_dev=float(devs.mean() / g0_norm) if g0_norm > 0 else 0.0,
                    seed=master_seed,
                )
            )
    return DeviationReport(
        rows=rows, master_seed=master_seed, reference_norm=g0_norm, shared_names=names
    )


@dataclass
class TrainResult:
    losses: list
    params: dict
    config: object


def train_toy(config, data_source, steps, mode, master_seed=0, rho_e=0.75, rho_d=0.5,
              sampling="furthest", optim=None):
    """Masked pre-training on synthetic images; deterministic per seed.

    ``data_source(step)`` returns the list of (C, H, W) images for that
    step. Emits the per-step loss curve and the final parameters.
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    params = mdl.init_params(config, derive_seed(master_seed, 7))
    state = optim if optim is not None else OptimState()
    throw = tokens.throw_furthest if sampling == "furthest" else tokens.throw_random
    losses = []
    for step in range(steps):
        batch = data_source(step)
        mdl.zero_grads(params)
        total = None
        for i, image in enumerate(batch):
            plan = tokens.generate_mask(config.grid, rho_e, derive_seed(master_seed, 1, step, i))
            if rho_d > 0:
                plan = throw(plan, rho_d, derive_seed(master_seed, 2, step, i))
            out = mdl.forward(params, image, plan, mode, config)
            patches = mdl.patchify(image, config.patch_size)
            targets = mdl.normalize_targets(patches) if config.norm_pix else patches
            loss = masked_loss(out, targets)
            total = loss if total is None else nm.add(total, loss)
        total = nm.mul(total, 1.0 / len(batch))
        nm.backward(total)
        adamw_step(params, state, lr=cosine_lr(step, steps, state.lr))
        losses.append(total.item())
    return TrainResult(losses=losses, params=params, config=config)
