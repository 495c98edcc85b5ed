"""A tiny noise predictor with schedule-blended cross-attention.

Architecture (float64 numpy, manual gradients, ~700 parameters):

  features  = [noisy pixel, fixed positional encodings, normalized step]
  h         = tanh(features @ W_in + b_in)                per position
  attention = softmax over positions of q(h) . k(token),  one map per
              conditioning token: a combination-dependent global token
              from a frozen random-feature encoder and M trainable
              local slot tokens; one cross-attention block serves the
              whole schedule (the single step group) — time enters
              through the blend weight s(t) and the step input feature
  A_t       = (1 - s(t)) * global map + s(t)/M_active * sum of active
              local maps  — the same blend `interpolate_attention`
              computes, vectorized over the batch (cached for analysis)
  inject    = (1-s(t)) * A^g outer v^g
              + s(t)/M_active * sum over active slots of A^m outer v^m
              — per-token map/value pairing, so each slot writes its own
              content at the positions its own map attends
  output    = tanh(h + inject @ W_proj) @ w_out + b_out

The global token comes from a frozen random-feature encoder over the
combination — linear terms per concept plus pairwise interaction
terms, squashed by tanh. It plays the role of a pretrained prompt
encoder: every combination has a well-defined embedding, but the
embedding of a combination outside the training support sits in a
region the denoiser never visited (the interaction term is zero on
singleton combinations), so purely global conditioning does not
extrapolate. Local slot tokens are trained, one per concept plus an
always-on background slot, so at blend-weighted steps each slot can
paint its own concept — the behaviour the composition experiment
probes. Gradients of the overlap penalty come from
`grad_sparsity_loss` and enter at the local-map nodes.
"""

from __future__ import annotations

import json
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import rng
from ..attention import grad_sparsity_loss, sparsity_loss, dice_overlap, schedule

__all__ = ["init_params", "param_count", "pos_features", "forward",
           "loss_and_grads", "save_params", "load_params", "batch_schedule"]

F_IN = 8      # pixel + 6 positional features + normalized step
HIDDEN = 16
DK = 6
DV = 8
DTOK = 6
_PARAM_STREAM_LEVEL = 251
_ENCODER_STREAM_LEVEL = 247
_ENCODER_SEED = 0  # one frozen encoder, shared by every model instance


def global_tokens(concept_active: np.ndarray) -> np.ndarray:
    """Frozen combination encoder, shape (batch, DTOK).

    tanh(E0 + d @ E1 + pairs(d) @ E2) with fixed random tensors: the
    linear part separates the training combinations, the pairwise
    interaction part moves any multi-concept combination away from
    everything a singleton-trained model has seen. Not trainable.
    """
    d = np.asarray(concept_active, dtype=float)
    b_sz, n_c = d.shape
    e0 = rng.gaussians(_ENCODER_SEED, _ENCODER_STREAM_LEVEL, 1, DTOK)
    e1 = rng.gaussians(_ENCODER_SEED, _ENCODER_STREAM_LEVEL, 2,
                       n_c * DTOK).reshape(n_c, DTOK)
    pre = e0 + d @ e1
    pair_idx = 3
    for i in range(n_c):
        for j in range(i + 1, n_c):
            e2 = rng.gaussians(_ENCODER_SEED, _ENCODER_STREAM_LEVEL,
                               pair_idx, DTOK)
            pre = pre + 2.0 * (d[:, i] * d[:, j])[:, None] * e2
            pair_idx += 1
    return np.tanh(pre)


def pos_features(size: int) -> np.ndarray:
    """Fixed per-position encodings, shape (size*size, 6)."""
    r, c = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    r = (r / (size - 1)).ravel()
    c = (c / (size - 1)).ravel()
    return np.column_stack([r, c,
                            np.sin(2 * np.pi * r), np.cos(2 * np.pi * r),
                            np.sin(2 * np.pi * c), np.cos(2 * np.pi * c)])


def _shapes(n_slots: int) -> Dict[str, Tuple[int, ...]]:
    return {
        "w_in": (F_IN, HIDDEN), "b_in": (HIDDEN,),
        "tok_local": (n_slots, DTOK),
        "w_proj": (DV, HIDDEN), "w_out": (HIDDEN, 1), "b_out": (1,),
        "wq": (HIDDEN, DK), "wk": (DTOK, DK), "wv": (DTOK, DV),
    }


def init_params(seed: int, n_slots: int = 3) -> Dict[str, np.ndarray]:
    """Seeded parameter tensors; slot embeddings start large enough to
    keep the slots distinguishable from the first step."""
    params = {}
    for idx, (name, shape) in enumerate(sorted(_shapes(n_slots).items())):
        size = int(np.prod(shape))
        draw = rng.gaussians(seed, _PARAM_STREAM_LEVEL, idx + 1, size)
        if name.startswith(("tok_",)):
            scale = 0.8
        elif name.startswith("b_"):
            scale = 0.0
        else:
            scale = 0.4 / np.sqrt(shape[0])
        params[name] = (scale * draw).reshape(shape)
    return params


def param_count(params: Dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))


def batch_schedule(t: np.ndarray, total_steps: int) -> np.ndarray:
    """Vectorized `schedule` with the same bit-exact endpoints."""
    return np.array([schedule(int(step), total_steps) for step in t])


def _softmax_positions(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: Dict[str, np.ndarray], x_t: np.ndarray, t: np.ndarray,
            active: np.ndarray, total_steps: int, pos: np.ndarray,
            time_blend: bool = True,
            global_scale: Optional[np.ndarray] = None,
            ) -> Tuple[np.ndarray, Dict]:
    """Predict the injected noise; returns (prediction, cache).

    `active` is a boolean (batch, slots) matrix; the last slot is the
    always-on background, the others mirror the concept coordinates of
    the combination. Inactive slots are excluded from the blend and
    receive no gradient. With `time_blend` off the blend weight is
    pinned to zero, which routes every step through the global map and
    global value — the "global-only conditioning" ablation.

    `global_scale` (batch,) multiplies the global token's injection —
    the training loop uses it for conditioning dropout, generation
    leaves it at one. The cached `a_map` stays the pure schedule blend.
    """
    b_sz, p_sz = x_t.shape
    if active.shape[0] != b_sz or t.shape[0] != b_sz:
        raise ValueError("batch dimensions disagree")
    if global_scale is None:
        global_scale = np.ones(b_sz)
    n_slots = active.shape[1]
    feats = np.concatenate([
        x_t[:, :, None],
        np.broadcast_to(pos, (b_sz,) + pos.shape),
        np.broadcast_to((t / (total_steps - 1.0))[:, None, None],
                        (b_sz, p_sz, 1)),
    ], axis=2)
    a1 = feats @ params["w_in"] + params["b_in"]
    h = np.tanh(a1)

    s = batch_schedule(t, total_steps) if time_blend else np.zeros(b_sz)
    mcnt = active.sum(axis=1).astype(float)
    act = active.astype(float)

    wq, wk, wv = params["wq"], params["wk"], params["wv"]
    q = h @ wq
    tokg = global_tokens(act[:, :n_slots - 1])
    kg = tokg @ wk
    vg = tokg @ wv
    km = params["tok_local"] @ wk
    vm = params["tok_local"] @ wv
    lg = (q * kg[:, None, :]).sum(axis=2) / np.sqrt(DK)
    lm = q @ km.T / np.sqrt(DK)
    map_g = _softmax_positions(lg)
    map_m = _softmax_positions(lm)
    local_mix = (map_m * act[:, None, :]).sum(axis=2)
    a_map = (1.0 - s)[:, None] * map_g + (s / mcnt)[:, None] * local_mix
    g_w = global_scale * (1.0 - s)
    local_inj = np.einsum("bpm,bm,mv->bpv", map_m, act, vm)
    inj = g_w[:, None, None] * (map_g[:, :, None] * vg[:, None, :]) \
        + (s / mcnt)[:, None, None] * local_inj

    a2 = h + inj @ params["w_proj"]
    h2 = np.tanh(a2)
    eps_hat = (h2 @ params["w_out"])[:, :, 0] + params["b_out"][0]
    cache = {"feats": feats, "h": h, "a_map": a_map, "inj": inj, "h2": h2,
             "q": q, "tokg": tokg, "kg": kg, "vg": vg, "km": km, "vm": vm,
             "map_g": map_g, "map_m": map_m, "act": act, "g_w": g_w,
             "active": active, "s": s, "mcnt": mcnt, "n_slots": n_slots}
    return eps_hat, cache


def _zeros_like_params(params):
    return {name: np.zeros_like(p) for name, p in params.items()}


def loss_and_grads(params: Dict[str, np.ndarray], x_t: np.ndarray,
                   t: np.ndarray, active: np.ndarray, eps: np.ndarray,
                   total_steps: int, pos: np.ndarray,
                   sparsity_weight: float, map_side: int,
                   time_blend: bool = True,
                   global_scale: Optional[np.ndarray] = None,
                   ) -> Tuple[float, float, float, float, Dict[str, np.ndarray]]:
    """Objective value and parameter gradients on one mini-batch.

    Returns (total, denoise part, overlap part, mean pairwise DICE of
    active local maps, gradients). The overlap part and the DICE metric
    are computed from the same maps the blend used; the overlap term
    only contributes gradient when its weight is positive.
    """
    if eps.shape != x_t.shape:
        raise ValueError("noise target and input shapes differ")
    b_sz, p_sz = x_t.shape
    eps_hat, cache = forward(params, x_t, t, active, total_steps, pos,
                             time_blend=time_blend,
                             global_scale=global_scale)
    diff = eps_hat - eps
    l_d = float((diff ** 2).mean())
    d_out = 2.0 * diff / diff.size

    # Overlap penalty and DICE bookkeeping on active local maps.
    l_n = 0.0
    dice_vals: List[float] = []
    sp = np.zeros_like(cache["map_m"])
    for row in range(b_sz):
        slots = np.where(cache["act"][row] > 0)[0]
        if slots.size < 2:
            continue
        maps = [cache["map_m"][row, :, m].reshape(map_side, map_side)
                for m in slots]
        l_n += sparsity_loss(maps) / b_sz
        pair = [dice_overlap(maps[i], maps[j])
                for i in range(len(maps)) for j in range(i + 1, len(maps))]
        dice_vals.append(float(np.mean(pair)))
        if sparsity_weight > 0.0:
            for m_slot, grad in zip(slots, grad_sparsity_loss(maps)):
                sp[row, :, m_slot] += (sparsity_weight / b_sz) * grad.ravel()
    mean_dice = float(np.mean(dice_vals)) if dice_vals else 0.0
    total = l_d + sparsity_weight * l_n

    grads = _zeros_like_params(params)
    h, h2, inj = cache["h"], cache["h2"], cache["inj"]

    d_h2 = d_out[:, :, None] * params["w_out"][None, None, :, 0]
    grads["w_out"][:, 0] = np.einsum("bph,bp->h", h2, d_out)
    grads["b_out"][0] = d_out.sum()
    d_a2 = d_h2 * (1.0 - h2 ** 2)
    d_h = d_a2.copy()
    d_inj = d_a2 @ params["w_proj"].T
    grads["w_proj"] += np.einsum("bpv,bph->vh", inj, d_a2)

    wq, wk, wv = params["wq"], params["wk"], params["wv"]
    s, mcnt, act = cache["s"], cache["mcnt"], cache["act"]
    vg, vm = cache["vg"], cache["vm"]
    map_g_arr, map_m_arr = cache["map_g"], cache["map_m"]
    g_w = cache["g_w"]
    w_loc = ((s / mcnt)[:, None] * act)  # (b, M) per-slot weights

    d_map_g = g_w[:, None] * (d_inj * vg[:, None, :]).sum(axis=2)
    d_map_m = w_loc[:, None, :] * np.einsum("bpv,mv->bpm", d_inj, vm) + sp
    d_vg = g_w[:, None] * (d_inj * map_g_arr[:, :, None]).sum(axis=1)
    d_vm = np.einsum("bm,bpm,bpv->mv", w_loc, map_m_arr, d_inj)

    # softmax over positions, per map
    d_lg = map_g_arr * (d_map_g
                        - (d_map_g * map_g_arr).sum(axis=1, keepdims=True))
    d_lm = map_m_arr * (d_map_m
                        - (d_map_m * map_m_arr).sum(axis=1, keepdims=True))

    q, kg, km = cache["q"], cache["kg"], cache["km"]
    rt = np.sqrt(DK)
    d_q = d_lg[:, :, None] * kg[:, None, :] / rt \
        + np.einsum("bpm,md->bpd", d_lm, km) / rt
    d_kg = (d_lg[:, :, None] * q).sum(axis=1) / rt
    d_km = np.einsum("bpm,bpd->md", d_lm, q) / rt

    tokg = cache["tokg"]  # frozen encoder output: no gradient into it
    grads["wk"] += tokg.T @ d_kg + params["tok_local"].T @ d_km
    grads["wv"] += tokg.T @ d_vg + params["tok_local"].T @ d_vm
    grads["wq"] += np.einsum("bph,bpd->hd", h, d_q)
    grads["tok_local"] += d_km @ wk.T + d_vm @ wv.T
    d_h += d_q @ wq.T

    d_a1 = d_h * (1.0 - h ** 2)
    grads["w_in"] += np.einsum("bpf,bph->fh", cache["feats"], d_a1)
    grads["b_in"] += d_a1.sum(axis=(0, 1))
    return total, l_d, l_n, mean_dice, grads


# ---------------------------------------------------------------------------
# Flat binary parameter files with a text manifest.
# ---------------------------------------------------------------------------

def save_params(params: Dict[str, np.ndarray], path) -> None:
    path = str(path)
    order = sorted(params)
    flat = np.concatenate([np.ascontiguousarray(params[n], dtype="<f8").ravel()
                           for n in order])
    flat.astype("<f8").tofile(path)
    manifest = {
        "dtype": "float64",
        "byte_order": "little",
        "order": order,
        "shapes": {n: list(params[n].shape) for n in order},
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_params(path) -> Dict[str, np.ndarray]:
    path = str(path)
    with open(path + ".json", "r", encoding="utf-8") as fh:
        manifest = json.loads(fh.read())
    flat = np.fromfile(path, dtype="<f8")
    params = {}
    offset = 0
    for name in manifest["order"]:
        shape = tuple(manifest["shapes"][name])
        size = int(np.prod(shape)) if shape else 1
        params[name] = flat[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != flat.size:
        raise ValueError("parameter file length does not match its manifest")
    return params
