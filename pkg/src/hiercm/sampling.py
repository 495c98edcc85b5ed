"""Ancestral sampling conditioned on a discrete combination.

Values are generated level by level. Every scalar variable (and every
noise dimension of the observation) owns a keyed counter-based stream
(see `rng`), so batches are bit-reproducible, rows are independent of
generation order, and the first n rows of a 2n-row batch equal the
n-row batch — the seed-prefix contract that support estimation and its
monotonicity tests lean on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .model import (
    HierModel,
    MechanismSpec,
    VariableId,
    model_hash,
    parents,
    validate,
    var_name,
)

__all__ = ["SampleBatch", "sample", "forward_from_level", "noise_dims",
           "export_batch", "import_batch"]


@dataclass
class SampleBatch:
    """Draws of every model variable, one column per scalar dimension.

    Columns are keyed by canonical names ("d.1", "z2.3", and "x.1".."x.k"
    for the observation dimensions). The conditioning combination is
    recorded per row; `sample` fills every row with the same d.
    """

    columns: Dict[str, np.ndarray]
    conditioning: np.ndarray  # (n, n_d) integer matrix
    seed: int
    widths: Tuple[int, ...]
    model_digest: str = ""

    @property
    def n(self) -> int:
        return int(self.conditioning.shape[0])

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named columns into an (n, len(names)) matrix."""
        return np.column_stack([self.columns[name] for name in names])

    def level_names(self, level: int) -> List[str]:
        num_levels = len(self.widths) - 2
        if level == num_levels + 1:
            return [f"x.{j}" for j in range(1, self.widths[-1] + 1)]
        prefix = "d" if level == 0 else f"z{level}"
        return [f"{prefix}.{i}" for i in range(1, self.widths[level] + 1)]

    def level_matrix(self, level: int) -> np.ndarray:
        return self.matrix(self.level_names(level))


def _check_combination(model: HierModel, d: Sequence[int]) -> Tuple[int, ...]:
    d = tuple(int(v) for v in d)
    if len(d) != model.n_d:
        raise ValueError(f"combination length {len(d)} != n(d) = {model.n_d}")
    for i, v in enumerate(d, start=1):
        card = model.cardinality(i)
        if not 0 <= v < card:
            raise ValueError(f"d.{i} = {v} outside its cardinality {card}")
    return d


def noise_dims(model: HierModel, below_level: int) -> int:
    """Count exogenous noise coordinates strictly below a level.

    Zero-scale (deterministic) mechanisms contribute no coordinates:
    they have no exogenous input to invert over.
    """
    total = 0
    for level in range(below_level + 1, model.num_levels + 1):
        for v in model.level_vars(level):
            mech = model.mechanisms[v]
            if mech.family != "piecewise-table" and mech.noise_scale > 0:
                total += 1
    x_mech = model.mechanisms[model.x_id]
    if x_mech.family == "concat-affine" and x_mech.noise_scale > 0:
        total += model.d_x - len(parents(model, model.x_id))
    return total


def sample(model: HierModel, d: Sequence[int], n: int, seed: int) -> SampleBatch:
    """Draw n ancestral samples conditioned on the combination d."""
    report = validate(model)
    if not report.ok:
        raise ValueError(f"model does not validate: {report.violations[0]}")
    if n < 1:
        raise ValueError("n must be >= 1")
    d = _check_combination(model, d)

    cols: Dict[str, np.ndarray] = {}
    for i, v in enumerate(d, start=1):
        cols[f"d.{i}"] = np.full(n, float(v))

    # Level 1: root conditionals selected by the paired indicator.
    for i in range(1, model.n_d + 1):
        variant = model.roots[i].by_value[d[i - 1]]
        u = rng.uniforms(seed, 1, i, n)
        cols[f"z1.{i}"] = variant.draw(u)

    # Levels 2..L: scalar mechanisms.
    for level in range(2, model.num_levels + 1):
        for v in model.level_vars(level):
            pa = model_parent_matrix(model, v, cols)
            u = rng.uniforms(seed, level, v.index, n)
            cols[f"z{level}.{v.index}"] = model.mechanisms[v].value(pa, u)

    _sample_observation(model, cols, n, seed)

    conditioning = np.tile(np.asarray(d, dtype=np.int64), (n, 1))
    return SampleBatch(columns=cols, conditioning=conditioning, seed=seed,
                       widths=model.widths, model_digest=model_hash(model))


def model_parent_matrix(model: HierModel, v: VariableId,
                        cols: Dict[str, np.ndarray]) -> np.ndarray:
    names = [var_name(p, model.num_levels) for p in parents(model, v)]
    return np.column_stack([cols[name] for name in names])


def _sample_observation(model: HierModel, cols: Dict[str, np.ndarray],
                        n: int, seed: int) -> None:
    x = model.x_id
    mech = model.mechanisms[x]
    pa = model_parent_matrix(model, x, cols)
    level = model.num_levels + 1
    if mech.family == "piecewise-table":
        if model.d_x != 1:
            raise ValueError("piecewise-table observation must be 1-dimensional")
        cols["x.1"] = mech.apply_table(pa)
        return
    if mech.family != "concat-affine":
        raise ValueError(f"observation family {mech.family!r} not samplable")
    k = pa.shape[1]
    coeff = np.asarray(mech.params[0::2])
    offset = np.asarray(mech.params[1::2])
    for j in range(k):
        cols[f"x.{j + 1}"] = coeff[j] * pa[:, j] + offset[j]
    for j in range(k, model.d_x):
        u = rng.uniforms(seed, level, 1, n, dim=j - k + 1)
        if mech.noise_family == "uniform":
            eps = 2.0 * u - 1.0
        else:
            from scipy.special import ndtri
            eps = ndtri(u)
        cols[f"x.{j + 1}"] = mech.noise_scale * eps


def forward_from_level(model: HierModel, level: int, z_level: np.ndarray,
                       noises: Dict[str, np.ndarray]) -> np.ndarray:
    """Deterministic push-forward of level values and explicit noises to x.

    `z_level` is an (n, width(level)) matrix; `noises` maps variable names
    below `level` (and "x.<j>" for observation noise dims) to standard
    noise rows. This is the composed map whose Jacobian the invertibility
    check differentiates, so it must consume exactly the coordinates
    `noise_dims` counts: zero-scale mechanisms take no noise entry.
    """
    n = z_level.shape[0]
    cols: Dict[str, np.ndarray] = {}
    for i in range(1, model.width(level) + 1):
        cols[f"z{level}.{i}"] = z_level[:, i - 1]
    for lvl in range(level + 1, model.num_levels + 1):
        for v in model.level_vars(lvl):
            mech = model.mechanisms[v]
            if mech.family == "piecewise-table":
                raise ValueError("piecewise-table mechanisms are not differentiable")
            pa = model_parent_matrix(model, v, cols)
            name = f"z{lvl}.{v.index}"
            if mech.noise_scale > 0:
                eps = noises[name]
                if mech.family == "location-scale-gaussian":
                    cols[name] = mech.mean(pa) + mech.sigma(pa) * eps
                else:
                    cols[name] = mech.mean(pa) + mech.noise_scale * eps
            else:
                cols[name] = mech.mean(pa)
    x = model.x_id
    mech = model.mechanisms[x]
    if mech.family != "concat-affine":
        raise ValueError(f"observation family {mech.family!r} not differentiable")
    pa = model_parent_matrix(model, x, cols)
    k = pa.shape[1]
    out = np.empty((n, model.d_x))
    coeff = np.asarray(mech.params[0::2])
    offset = np.asarray(mech.params[1::2])
    out[:, :k] = coeff * pa + offset
    for j in range(k, model.d_x):
        if mech.noise_scale > 0:
            out[:, j] = mech.noise_scale * noises[f"x.{j - k + 1}"]
        else:
            out[:, j] = 0.0
    return out


# ---------------------------------------------------------------------------
# Batch export: columnar text plus a sidecar metadata file.
# ---------------------------------------------------------------------------

def export_batch(batch: SampleBatch, path, sidecar_path=None) -> None:
    """Write a batch as CSV (header = variable names) plus metadata JSON."""
    path = str(path)
    sidecar = str(sidecar_path) if sidecar_path else path + ".meta.json"
    names: List[str] = []
    for level in range(len(batch.widths)):
        names.extend(batch.level_names(level))
    data = batch.matrix(names)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = {
        "seed": batch.seed,
        "d": [int(v) for v in batch.conditioning[0]],
        "model_hash": batch.model_digest,
        "widths": list(batch.widths),
        "rows": batch.n,
    }
    with open(sidecar, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def import_batch(path, sidecar_path=None) -> SampleBatch:
    path = str(path)
    sidecar = str(sidecar_path) if sidecar_path else path + ".meta.json"
    with open(sidecar, "r", encoding="utf-8") as fh:
        meta = json.loads(fh.read())
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    cols = {name: data[:, j].copy() for j, name in enumerate(header)}
    conditioning = np.tile(np.asarray(meta["d"], dtype=np.int64),
                           (data.shape[0], 1))
    return SampleBatch(columns=cols, conditioning=conditioning,
                       seed=int(meta["seed"]), widths=tuple(meta["widths"]),
                       model_digest=meta.get("model_hash", ""))
