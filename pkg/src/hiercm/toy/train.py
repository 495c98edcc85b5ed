"""Training loop, diffusion schedule, and composition evaluation.

The forward process is the standard fixed-variance gaussian corruption
with linear betas; the training objective is mean-squared noise
prediction (the usual tractable surrogate for the step-wise variational
bound) plus the weighted attention-overlap penalty. Training drops the
global token's contribution on a random fraction of samples
(conditioning dropout, the usual trick for keeping auxiliary paths
trained), which forces the local slots to learn to paint their
concepts on their own. Everything is driven by keyed streams, so a
(config, dataset) pair maps to exactly one metrics log, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import rng
from ..attention import DEFAULT_SPARSITY_WEIGHT
from . import denoiser
from .scenes import Dataset, SceneSpec, detect_all

__all__ = ["TrainConfig", "TrainingDiverged", "diffusion_schedule", "train",
           "elbo_loss", "generate", "evaluate_composition"]

_SHUFFLE_TAG = 1 << 22
# Standalone-evaluation noise tags; must stay inside the generator's 24-bit
# index field and clear of the training loop's epoch*4096+batch tags.
_ELBO_TAG = 1 << 23
_STEP_STREAM = 249
_NOISE_STREAM = 248
_SAMPLER_STREAM = 252
_DROPOUT_STREAM = 246


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 8
    sparsity_weight: float = DEFAULT_SPARSITY_WEIGHT
    slots: int = 3
    learning_rate: float = 0.02
    epochs: int = 60
    batch_size: int = 48
    seed: int = 0
    with_time_dependence: bool = True
    with_sparsity: bool = True
    beta_min: float = 0.1
    beta_max: float = 0.8
    global_dropout: float = 0.3

    def __post_init__(self):
        if self.sparsity_weight < 0:
            raise ValueError("sparsity weight must be >= 0")
        if self.slots < 1:
            raise ValueError("need at least one conditioning slot")
        if self.total_steps < 2:
            raise ValueError("need at least two diffusion steps")
        if not 0.0 <= self.global_dropout < 1.0:
            raise ValueError("global dropout must be in [0, 1)")

    @property
    def effective_weight(self) -> float:
        return self.sparsity_weight if self.with_sparsity else 0.0


class TrainingDiverged(RuntimeError):
    """Raised when the objective stops being finite."""


def diffusion_schedule(config: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(betas, cumulative alpha-bar) of the forward corruption."""
    betas = np.linspace(config.beta_min, config.beta_max, config.total_steps)
    abar = np.cumprod(1.0 - betas)
    return betas, abar


def _actives(combos: np.ndarray, slots: int) -> np.ndarray:
    n = combos.shape[0]
    active = np.zeros((n, slots), dtype=bool)
    active[:, :combos.shape[1]] = combos > 0
    active[:, -1] = True  # background slot
    return active


def train(config: TrainConfig, dataset: Dataset,
          ) -> Tuple[Dict[str, np.ndarray], List[Dict]]:
    """Optimize the denoiser on a rendered dataset; returns params + log."""
    size = dataset.images.shape[1]
    n = dataset.n
    x0 = dataset.images.reshape(n, size * size) * 2.0 - 1.0
    active = _actives(dataset.combinations, config.slots)
    pos = denoiser.pos_features(size)
    _, abar = diffusion_schedule(config)
    params = denoiser.init_params(config.seed, n_slots=config.slots)
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    step = 0

    metrics: List[Dict] = []
    batches = max(1, n // config.batch_size)
    for epoch in range(config.epochs):
        order = rng.permutation(config.seed, _SHUFFLE_TAG + epoch, n)
        sums = np.zeros(3)
        for b in range(batches):
            rows = order[b * config.batch_size:(b + 1) * config.batch_size]
            if rows.size == 0:
                continue
            tag = epoch * 4096 + b + 1
            u = rng.uniforms(config.seed, _STEP_STREAM, tag, rows.size)
            t = np.minimum((u * config.total_steps).astype(int),
                           config.total_steps - 1)
            eps = rng.gaussians(config.seed, _NOISE_STREAM, tag,
                                rows.size * size * size
                                ).reshape(rows.size, size * size)
            x_t = np.sqrt(abar[t])[:, None] * x0[rows] \
                + np.sqrt(1.0 - abar[t])[:, None] * eps
            keep = rng.uniforms(config.seed, _DROPOUT_STREAM, tag,
                                rows.size) >= config.global_dropout
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    total, l_d, l_n, dice, grads = denoiser.loss_and_grads(
                        params, x_t, t, active[rows], eps, config.total_steps,
                        pos, config.effective_weight, size,
                        time_blend=config.with_time_dependence,
                        global_scale=keep.astype(float))
            except ValueError as exc:
                # The kernels reject non-finite maps; reaching that state
                # from finite inputs means the parameters blew up.
                if "non-finite" not in str(exc):
                    raise
                raise TrainingDiverged(
                    f"numeric overflow at epoch {epoch}, batch {b}: {exc}"
                ) from None
            if not np.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite objective at epoch {epoch}, batch {b}: "
                    f"total={total!r}, denoise={l_d!r}, overlap={l_n!r}")
            step += 1
            for name, g in grads.items():
                m_state[name] = b1 * m_state[name] + (1 - b1) * g
                v_state[name] = b2 * v_state[name] + (1 - b2) * g * g
                m_hat = m_state[name] / (1 - b1 ** step)
                v_hat = v_state[name] / (1 - b2 ** step)
                params[name] = params[name] - config.learning_rate * m_hat \
                    / (np.sqrt(v_hat) + adam_eps)
            # Overflow shows up in the parameters one batch before it can
            # poison the next objective; abort here so the caller sees a
            # divergence, not an arithmetic error from inside the kernels.
            blown = sorted(name for name, p in params.items()
                           if not np.all(np.isfinite(p)))
            if blown:
                raise TrainingDiverged(
                    f"non-finite parameters after epoch {epoch}, batch {b}: "
                    f"{', '.join(blown)}; last total={total!r}")
            sums += (l_d, l_n, dice)
        metrics.append({"epoch": epoch,
                        "denoise_loss": float(sums[0] / batches),
                        "overlap_loss": float(sums[1] / batches),
                        "mean_dice": float(sums[2] / batches)})
    return params, metrics


def elbo_loss(params: Dict[str, np.ndarray], dataset: Dataset,
              config: TrainConfig, mode: str = "interpolated",
              seed: int = 0) -> float:
    """Per-pixel noise-prediction error averaged over every step.

    `mode` selects the conditioning path: "interpolated" uses the
    schedule blend, "global-only" pins the blend to the global map.
    A predictor that always answers zero scores 1.0 in expectation
    (the mean square of a standard normal), which anchors the scale.
    """
    if mode not in ("interpolated", "global-only"):
        raise ValueError(f"unknown conditioning mode {mode!r}")
    size = dataset.images.shape[1]
    n = dataset.n
    x0 = dataset.images.reshape(n, size * size) * 2.0 - 1.0
    active = _actives(dataset.combinations, params["tok_local"].shape[0])
    pos = denoiser.pos_features(size)
    _, abar = diffusion_schedule(config)
    total = 0.0
    for t_step in range(config.total_steps):
        eps = rng.gaussians(seed, _NOISE_STREAM, _ELBO_TAG + t_step,
                            n * size * size).reshape(n, size * size)
        x_t = np.sqrt(abar[t_step]) * x0 + np.sqrt(1.0 - abar[t_step]) * eps
        t = np.full(n, t_step, dtype=int)
        eps_hat, _ = denoiser.forward(params, x_t, t, active,
                                      config.total_steps, pos,
                                      time_blend=(mode == "interpolated"))
        total += float(((eps_hat - eps) ** 2).mean())
    return total / config.total_steps


def generate(params: Dict[str, np.ndarray], scene: SceneSpec,
             d: Sequence[int], n: int, seed: int, config: TrainConfig,
             tag: int = 0) -> np.ndarray:
    """Reverse-process samples conditioned on a combination."""
    size = scene.size
    p_sz = size * size
    betas, abar = diffusion_schedule(config)
    alphas = 1.0 - betas
    combos = np.tile(np.asarray(d, dtype=int), (n, 1))
    active = _actives(combos, params["tok_local"].shape[0])
    pos = denoiser.pos_features(size)
    draws = rng.gaussians(seed, _SAMPLER_STREAM, tag + 1,
                          n * p_sz * (config.total_steps + 1))
    draws = draws.reshape(config.total_steps + 1, n, p_sz)
    x = draws[0]
    time_blend = config.with_time_dependence
    for t_step in range(config.total_steps - 1, -1, -1):
        t = np.full(n, t_step, dtype=int)
        eps_hat, _ = denoiser.forward(params, x, t, active,
                                      config.total_steps, pos,
                                      time_blend=time_blend)
        x0_hat = (x - np.sqrt(1.0 - abar[t_step]) * eps_hat) \
            / np.sqrt(abar[t_step])
        x0_hat = np.clip(x0_hat, -1.5, 1.5)
        if t_step == 0:
            x = x0_hat
            break
        prev = abar[t_step - 1]
        mean = (np.sqrt(prev) * betas[t_step] / (1.0 - abar[t_step])) * x0_hat \
            + (np.sqrt(alphas[t_step]) * (1.0 - prev) / (1.0 - abar[t_step])) * x
        var = (1.0 - prev) / (1.0 - abar[t_step]) * betas[t_step]
        x = mean + np.sqrt(var) * draws[config.total_steps - t_step]
    return ((x + 1.0) / 2.0).reshape(n, size, size)


def evaluate_composition(params: Dict[str, np.ndarray], scene: SceneSpec,
                         combos: Sequence[Sequence[int]], n: int, seed: int,
                         config: TrainConfig) -> Dict[Tuple[int, ...], float]:
    """Fraction of reverse-process samples rendering each combination.

    Success means the region classifier sees exactly the active
    concepts — present where the combination says so, absent elsewhere.
    """
    rates = {}
    for ci, d in enumerate(sorted({tuple(int(v) for v in c) for c in combos})):
        images = generate(params, scene, d, n, seed, config, tag=ci * 64)
        hits = sum(detect_all(scene, d, img) for img in images)
        rates[d] = hits / n
    return rates
