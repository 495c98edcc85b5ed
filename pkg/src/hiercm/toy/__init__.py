"""Desk-scale diffusion demo: scenes, a tiny denoiser, and training."""

from .scenes import (
    Concept,
    Dataset,
    SceneSpec,
    default_scene,
    detect_all,
    detect_concept,
    generate_dataset,
    render,
)
from .train import (
    TrainConfig,
    TrainingDiverged,
    elbo_loss,
    evaluate_composition,
    generate,
    train,
)
