"""Synthetic scenes: concept stamps rendered into small grayscale grids.

Each concept owns a fixed stamp (a boolean region) and a palette of
intensity levels; a discrete combination decides which concepts appear.
The renderer doubles as the ground truth for evaluation: a concept
counts as present in a generated image when its stamp region is
brighter than the surrounding ring by a margin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .. import rng

__all__ = ["Concept", "SceneSpec", "default_scene", "render",
           "generate_dataset", "Dataset", "detect_concept"]

DETECT_MARGIN = 0.25
_DATASET_STREAM_LEVEL = 250


@dataclass(frozen=True)
class Concept:
    stamp: np.ndarray          # boolean (size, size) region
    palette: Tuple[float, ...]  # allowed intensities when present

    def __post_init__(self):
        if self.stamp.dtype != bool:
            object.__setattr__(self, "stamp", self.stamp.astype(bool))
        if not self.palette or any(not 0 < p <= 1 for p in self.palette):
            raise ValueError("palette intensities must lie in (0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    size: int
    concepts: Dict[int, Concept]

    def __post_init__(self):
        for cid, concept in self.concepts.items():
            if concept.stamp.shape != (self.size, self.size):
                raise ValueError(f"concept {cid} stamp has the wrong shape")

    @property
    def concept_ids(self) -> List[int]:
        return sorted(self.concepts)


def default_scene() -> SceneSpec:
    """Two disjoint stamps on a 16x16 grid: a square and a plus sign."""
    size = 16
    square = np.zeros((size, size), dtype=bool)
    square[3:7, 3:7] = True
    plus = np.zeros((size, size), dtype=bool)
    plus[9:15, 10:12] = True
    plus[11:13, 8:14] = True
    return SceneSpec(size=size, concepts={
        1: Concept(stamp=square, palette=(0.8, 1.0)),
        2: Concept(stamp=plus, palette=(0.7, 0.9)),
    })


def render(scene: SceneSpec, d: Sequence[int],
           palette_choice: Dict[int, int]) -> np.ndarray:
    """One image for a combination; nonzero d_i paints concept i."""
    if len(d) != len(scene.concept_ids):
        raise ValueError("combination length does not match the concept count")
    img = np.zeros((scene.size, scene.size))
    for pos, cid in enumerate(scene.concept_ids):
        if d[pos] == 0:
            continue
        concept = scene.concepts[cid]
        level = concept.palette[palette_choice[cid] % len(concept.palette)]
        img[concept.stamp] = level
    return img


@dataclass
class Dataset:
    images: np.ndarray        # (N, size, size)
    combinations: np.ndarray  # (N, n_concepts) ints
    manifest: Dict

    @property
    def n(self) -> int:
        return int(self.images.shape[0])


def generate_dataset(scene: SceneSpec, space: Iterable[Sequence[int]],
                     per_combination: int, seed: int) -> Dataset:
    """Deterministic (combination, image) pairs over a training space.

    Palette levels are drawn per sample from each active concept's
    palette through keyed streams, so datasets are reproducible and
    grow-stable in `per_combination`.
    """
    space = [tuple(int(v) for v in c) for c in space]
    if not space:
        raise ValueError("training space must be non-empty")
    ids = scene.concept_ids
    for combo in space:
        if len(combo) != len(ids):
            raise ValueError(f"combination {combo} does not index the concepts")
    images, combos = [], []
    for ci, combo in enumerate(sorted(set(space))):
        draws = {cid: rng.uniforms(seed, _DATASET_STREAM_LEVEL,
                                   ci * (len(ids) + 1) + slot + 1,
                                   per_combination)
                 for slot, cid in enumerate(ids)}
        for r in range(per_combination):
            choice = {cid: int(draws[cid][r] * len(scene.concepts[cid].palette))
                      for cid in ids}
            images.append(render(scene, combo, choice))
            combos.append(combo)
    manifest = {
        "seed": seed,
        "per_combination": per_combination,
        "space": [list(c) for c in sorted(set(space))],
        "size": scene.size,
        "concepts": {str(cid): {"pixels": int(scene.concepts[cid].stamp.sum()),
                                "palette": list(scene.concepts[cid].palette)}
                     for cid in ids},
    }
    return Dataset(images=np.stack(images), combinations=np.asarray(combos),
                   manifest=manifest)


def _ring(stamp: np.ndarray, width: int = 2) -> np.ndarray:
    """Dilate the stamp and subtract it: the surrounding comparison band."""
    grown = stamp.copy()
    for _ in range(width):
        g = grown.copy()
        g[1:, :] |= grown[:-1, :]
        g[:-1, :] |= grown[1:, :]
        g[:, 1:] |= grown[:, :-1]
        g[:, :-1] |= grown[:, 1:]
        grown = g
    return grown & ~stamp


def detect_concept(scene: SceneSpec, concept_id: int, image: np.ndarray,
                   margin: float = DETECT_MARGIN) -> bool:
    """Is the concept's region brighter than its surroundings?"""
    stamp = scene.concepts[concept_id].stamp
    ring = _ring(stamp)
    return float(image[stamp].mean() - image[ring].mean()) >= margin


def detect_all(scene: SceneSpec, d: Sequence[int], image: np.ndarray,
               margin: float = DETECT_MARGIN) -> bool:
    """Success for a combination: exactly the active concepts detected."""
    for pos, cid in enumerate(scene.concept_ids):
        present = detect_concept(scene, cid, image, margin)
        if bool(d[pos]) != present:
            return False
    return True
