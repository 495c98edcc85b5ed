"""Command-line entry point for every analysis plus the training demo.

Exit codes are a fixed taxonomy shared by all subcommands:

  0  success (analysis ran, answer affirmative where one applies)
  1  analysis-negative (validation violations, non-composable candidates,
     a violated identifiability check, or a truth mismatch in recovery)
  2  usage or I/O problem (bad flags, missing or malformed files)
  3  internal failure (unexpected exception, training divergence)

Every subcommand accepts `--out DIR`; when given, the command writes a
human-diffable `report.txt`, a machine-readable `report.json`, and a
`manifest.json` holding the fully resolved configuration, input
digests, seed, and tool version. Reruns with the same manifest produce
byte-identical reports; wall-clock time lives only in the manifest.
All randomness flows from `--seed`.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .composability import cartesian_candidates, enumerate_composable_space
from .identifiability import (
    NOT_VERIFIED,
    PASS,
    VIOLATED,
    UnsupportedFamilyError,
    check_conditional_independence,
    check_invertibility,
    check_sufficient_variability,
)
from .model import ModelFormatError, load_model, model_hash, validate
from .reporting import (
    RunManifest,
    TOOL_VERSION,
    dumps_json,
    file_digest,
    format_float,
    write_outputs,
)
from .sampling import import_batch, sample
from .structure import recover_structure, score_graph
from .support import empirical_support_table
from .toy import denoiser, scenes
from .toy.train import (
    TrainConfig,
    TrainingDiverged,
    evaluate_composition,
    train,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3

ARMS = ("full", "no-td", "no-sr", "no-td-no-sr")


class UsageError(ValueError):
    """Bad inputs discovered after flag parsing (still exit code 2)."""


# ---------------------------------------------------------------------------
# Small shared helpers.
# ---------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_jsonable(v) for v in items]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    return value


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_combos(path) -> List[Tuple[int, ...]]:
    raw = _load_json(path)
    if not isinstance(raw, list) or not all(isinstance(c, list) for c in raw):
        raise UsageError(f"{path}: expected a JSON list of combinations")
    return [tuple(int(v) for v in c) for c in raw]


def _combo_text(combo: Sequence[int]) -> str:
    return "[" + ",".join(str(int(v)) for v in combo) + "]"


def _finish(args, command: str, config: Dict, digest: str,
            inputs: Dict[str, str], lines: List[str], payload: Dict,
            t0: float) -> None:
    manifest = RunManifest(command=command, config=_jsonable(config),
                           model_hash=digest, seed=int(config.get("seed", 0)),
                           inputs=inputs,
                           wall_clock_s=round(time.time() - t0, 6))
    print(f"run {manifest.run_id} ({command})")
    for line in lines:
        print(line)
    if getattr(args, "out", None):
        write_outputs(args.out, manifest, lines, _jsonable(payload))


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    t0 = time.time()
    mdl = load_model(args.model)
    report = validate(mdl)
    lines = (["model ok"] if report.ok
             else [f"violation: {v}" for v in report.violations])
    payload = {"ok": report.ok, "violations": list(report.violations)}
    config = {"model": str(args.model), "seed": 0}
    _finish(args, "validate", config, model_hash(mdl),
            {str(args.model): file_digest(args.model)}, lines, payload, t0)
    return EXIT_OK if report.ok else EXIT_NEGATIVE


# ---------------------------------------------------------------------------
# composability
# ---------------------------------------------------------------------------

def cmd_composability(args) -> int:
    t0 = time.time()
    mdl = load_model(args.model)
    space = _load_combos(args.space)
    if not space:
        raise UsageError("the training space file lists no combinations")
    inputs = {str(args.model): file_digest(args.model),
              str(args.space): file_digest(args.space)}
    if args.candidates == "cartesian":
        candidates = None
    else:
        candidates = _load_combos(args.candidates)
        inputs[str(args.candidates)] = file_digest(args.candidates)

    table = None
    if args.grid is not None:
        cand = candidates if candidates is not None \
            else cartesian_candidates(mdl, space)
        table = empirical_support_table(mdl, list(space) + list(cand),
                                        n=args.n, seed=args.seed,
                                        cells=args.grid)
    report = enumerate_composable_space(mdl, space, candidates=candidates,
                                        table=table, n=args.n,
                                        seed=args.seed)

    lines = []
    for v in report.verdicts:
        if v.composable:
            wit = ", ".join(f"{name}<-{_combo_text(w)}"
                            for name, w in sorted(v.witnesses.items()))
            lines.append(f"composable {_combo_text(v.combination)}"
                         + (f"  witnesses: {wit}" if wit else ""))
        else:
            blk = "; ".join(f"{name} at {cell}" for name, cell in v.blockers)
            lines.append(f"not-composable {_combo_text(v.combination)}"
                         f"  blockers: {blk}")
    n_good = len(report.composable)
    lines.append(f"composable {n_good}/{len(report.candidates)} candidates")

    payload = {
        "space": [list(c) for c in report.space],
        "candidates": [list(c) for c in report.candidates],
        "composable_count": n_good,
        "verdicts": [{
            "combination": list(v.combination),
            "composable": v.composable,
            "witnesses": {k: list(w) for k, w in v.witnesses.items()},
            "blockers": [[name, list(np.atleast_1d(cell))]
                         for name, cell in v.blockers],
            "retried": v.retried,
        } for v in report.verdicts],
    }
    config = {"model": str(args.model), "space": str(args.space),
              "candidates": args.candidates, "grid": args.grid,
              "n": args.n, "seed": args.seed}
    _finish(args, "composability", config, model_hash(mdl), inputs,
            lines, payload, t0)
    return EXIT_OK if n_good == len(report.candidates) else EXIT_NEGATIVE


# ---------------------------------------------------------------------------
# identify
# ---------------------------------------------------------------------------

def _identify_one(mdl, check: str, args):
    if check == "invertibility":
        rep = check_invertibility(mdl, level=args.inv_level,
                                  points=args.points, seed=args.seed)
        verdict = PASS if rep.passed else VIOLATED
        detail = {"level": rep.level, "input_dim": rep.input_dim,
                  "output_dim": rep.output_dim,
                  "dimension_ok": rep.dimension_ok,
                  "min_singular": rep.min_singular,
                  "tolerance": rep.tolerance, "points": rep.points,
                  "reason": rep.reason}
        note = (f"min singular {format_float(rep.min_singular)} over "
                f"{rep.points} points" if rep.dimension_ok
                else f"dimension mismatch: {rep.reason}")
    elif check == "ci":
        rep = check_conditional_independence(mdl, args.level,
                                             alpha=args.alpha,
                                             seed=args.seed)
        verdict = PASS if rep.all_independent else VIOLATED
        detail = {"level": rep.level, "mode": rep.mode, "alpha": rep.alpha,
                  "pairs": len(rep.records),
                  "all_independent": rep.all_independent}
        note = f"{len(rep.records)} sibling pairs ({rep.mode})"
    elif check == "variability":
        rep = check_sufficient_variability(mdl, args.level,
                                           probes=args.probes,
                                           attempts=args.attempts,
                                           seed=args.seed)
        verdict = rep.verdict
        detail = {"level": rep.level, "target_rank": rep.target_rank,
                  "structural_bound": rep.structural_bound,
                  "rank": rep.rank, "mode": rep.mode,
                  "tolerance": rep.tolerance, "probes": rep.probes}
        note = f"rank {rep.rank}/{rep.target_rank}"
    else:
        raise UsageError(f"unknown check {check!r} "
                         f"(choose from invertibility, ci, variability)")
    return verdict, note, detail


def cmd_identify(args) -> int:
    t0 = time.time()
    mdl = load_model(args.model)
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    if not checks:
        raise UsageError("no checks requested")

    lines: List[str] = []
    results: Dict[str, Dict] = {}
    violated = False
    for check in checks:
        try:
            verdict, note, detail = _identify_one(mdl, check, args)
        except UnsupportedFamilyError as exc:
            lines.append(f"{check}: UNSUPPORTED ({exc})")
            results[check] = {"verdict": "unsupported", "reason": str(exc)}
            continue
        lines.append(f"{check}: {verdict.upper().replace('_', '-')}  {note}")
        results[check] = {"verdict": verdict, **detail}
        violated = violated or verdict == VIOLATED

    payload = {"checks": results}
    config = {"model": str(args.model), "checks": args.checks,
              "level": args.level, "inv_level": args.inv_level,
              "probes": args.probes, "attempts": args.attempts,
              "points": args.points, "alpha": args.alpha,
              "seed": args.seed}
    _finish(args, "identify", config, model_hash(mdl),
            {str(args.model): file_digest(args.model)}, lines, payload, t0)
    return EXIT_NEGATIVE if violated else EXIT_OK


# ---------------------------------------------------------------------------
# recover
# ---------------------------------------------------------------------------

def cmd_recover(args) -> int:
    t0 = time.time()
    inputs: Dict[str, str] = {}
    if args.batches:
        batches = [import_batch(p) for p in args.batches]
        for p in args.batches:
            inputs[str(p)] = file_digest(p)
        digest = "+".join(file_digest(p)[:8] for p in args.batches)
    elif args.model and args.space:
        mdl = load_model(args.model)
        space = _load_combos(args.space)
        if not space:
            raise UsageError("the sampling space file lists no combinations")
        batches = [sample(mdl, d, args.n, args.seed + i)
                   for i, d in enumerate(space)]
        inputs = {str(args.model): file_digest(args.model),
                  str(args.space): file_digest(args.space)}
        digest = model_hash(mdl)
    else:
        raise UsageError("recover needs --batches FILES or "
                         "--model FILE --space FILE")

    rec = recover_structure(batches, alpha=args.alpha, test=args.test,
                            seed=args.seed)
    edge_rows = rec.edge_lists()
    lines = [f"recovered {len(edge_rows)} latent edges "
             f"from {rec.n_samples} samples ({rec.test}, "
             f"alpha={format_float(rec.alpha)})"]
    lines.extend(f"edge {a} -> {b}" for a, b in edge_rows)

    payload: Dict = {"widths": list(rec.widths), "edges": edge_rows,
                     "alpha": rec.alpha, "test": rec.test,
                     "n_samples": rec.n_samples}
    code = EXIT_OK
    if args.truth:
        truth = load_model(args.truth)
        inputs[str(args.truth)] = file_digest(args.truth)
        sr = score_graph(rec, truth, seed=args.seed)
        lines.append(f"score vs truth: precision={format_float(sr.precision)}"
                     f" recall={format_float(sr.recall)}"
                     f" f1={format_float(sr.f1)}"
                     f" exact_match={sr.exact_match}")
        payload["score"] = {"precision": sr.precision, "recall": sr.recall,
                            "f1": sr.f1, "exact_match": sr.exact_match,
                            "matched": sr.matched,
                            "recovered_count": sr.recovered_count,
                            "truth_count": sr.truth_count}
        if not sr.exact_match:
            code = EXIT_NEGATIVE

    config = {"batches": [str(p) for p in (args.batches or [])],
              "model": str(args.model) if args.model else None,
              "space": str(args.space) if args.space else None,
              "truth": str(args.truth) if args.truth else None,
              "n": args.n, "alpha": args.alpha, "test": args.test,
              "seed": args.seed}
    _finish(args, "recover", config, digest, inputs, lines, payload, t0)
    if args.out:
        graph_path = Path(args.out) / "recovered.json"
        graph_path.write_text(dumps_json(_jsonable(
            {"widths": list(rec.widths), "edges": edge_rows,
             "alpha": rec.alpha, "test": rec.test,
             "n_samples": rec.n_samples})), encoding="utf-8")
    return code


# ---------------------------------------------------------------------------
# toy
# ---------------------------------------------------------------------------

_TOY_DEFAULTS = {
    "scene": "default",
    "space": [[0, 1], [1, 0]],
    "held_out": [[1, 1]],
    "per_combination": 100,
    "dataset_seed": 11,
    "eval_samples": 32,
    "eval_seed": 5,
    "total_steps": 8,
    "sparsity_weight": 1e-4,
    "slots": 3,
    "learning_rate": 0.04,
    "epochs": 400,
    "batch_size": 48,
    "seed": 0,
    "beta_min": 0.1,
    "beta_max": 0.8,
    "global_dropout": 0.3,
}


def _resolve_toy_config(raw: Dict, arm: str, seed_flag: Optional[int]) -> Dict:
    unknown = sorted(set(raw) - set(_TOY_DEFAULTS))
    if unknown:
        raise UsageError(f"unknown toy config fields: {', '.join(unknown)}")
    cfg = dict(_TOY_DEFAULTS)
    cfg.update(raw)
    if seed_flag is not None:
        cfg["seed"] = seed_flag
    cfg["arm"] = arm
    cfg["with_time_dependence"] = arm in ("full", "no-sr")
    cfg["with_sparsity"] = arm in ("full", "no-td")
    return cfg


def _write_metrics_csv(path: Path, metrics: List[Dict]) -> None:
    cols = ["epoch", "denoise_loss", "overlap_loss", "mean_dice"]
    rows = [",".join(cols)]
    for m in metrics:
        rows.append(",".join([str(int(m["epoch"]))]
                             + [format_float(m[c]) for c in cols[1:]]))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def _emit_comparison(root: Path) -> None:
    """Cross-arm summary, rebuilt whenever two or more arm reports exist."""
    arms: Dict[str, Dict] = {}
    for arm in ARMS:
        rp = root / arm / "report.json"
        if rp.exists():
            arms[arm] = json.loads(rp.read_text(encoding="utf-8"))
    if len(arms) < 2:
        return
    lines = [f"arms compared: {', '.join(sorted(arms))}"]
    for arm in sorted(arms):
        a = arms[arm]
        lines.append(f"{arm}: held-out success "
                     f"{format_float(a['held_out_success'])}, in-support "
                     f"{format_float(a['in_support_success'])}, final DICE "
                     f"{format_float(a['final']['mean_dice'])}")
    deltas = {}
    if "full" in arms:
        for arm in sorted(arms):
            if arm == "full":
                continue
            delta = (arms["full"]["held_out_success"]
                     - arms[arm]["held_out_success"])
            deltas[arm] = delta
            lines.append(f"held-out success, full - {arm}: "
                         f"{format_float(delta)}")
    payload = {
        "arms": {arm: {"held_out_success": a["held_out_success"],
                       "in_support_success": a["in_support_success"],
                       "final_dice": a["final"]["mean_dice"]}
                 for arm, a in arms.items()},
        "held_out_delta_vs_full": deltas,
    }
    (root / "comparison.txt").write_text("\n".join(lines) + "\n",
                                         encoding="utf-8")
    (root / "comparison.json").write_text(dumps_json(_jsonable(payload)),
                                          encoding="utf-8")


def cmd_toy(args) -> int:
    t0 = time.time()
    raw = _load_json(args.config) if args.config else {}
    if not isinstance(raw, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    cfg = _resolve_toy_config(raw, args.arm, args.seed)
    if cfg["scene"] != "default":
        raise UsageError(f"unknown scene {cfg['scene']!r}")
    scene = scenes.default_scene()
    space = [tuple(int(v) for v in c) for c in cfg["space"]]
    held_out = [tuple(int(v) for v in c) for c in cfg["held_out"]]
    if not space:
        raise UsageError("toy config lists no training combinations")

    dataset = scenes.generate_dataset(scene, space, cfg["per_combination"],
                                      cfg["dataset_seed"])
    tc = TrainConfig(total_steps=cfg["total_steps"],
                     sparsity_weight=cfg["sparsity_weight"],
                     slots=cfg["slots"],
                     learning_rate=cfg["learning_rate"],
                     epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                     seed=cfg["seed"],
                     with_time_dependence=cfg["with_time_dependence"],
                     with_sparsity=cfg["with_sparsity"],
                     beta_min=cfg["beta_min"], beta_max=cfg["beta_max"],
                     global_dropout=cfg["global_dropout"])
    params, metrics = train(tc, dataset)
    rates = evaluate_composition(params, scene, space + held_out,
                                 cfg["eval_samples"], cfg["eval_seed"], tc)

    in_support = [rates[d] for d in sorted(set(space))]
    held = [rates[d] for d in sorted(set(held_out))] or [0.0]
    final = metrics[-1]
    lines = [f"arm {args.arm}: trained {tc.epochs} epochs, "
             f"final denoise loss {format_float(final['denoise_loss'])}, "
             f"final mean DICE {format_float(final['mean_dice'])}"]
    for d in sorted(rates):
        tagline = "held-out" if d in set(held_out) else "in-support"
        lines.append(f"success {_combo_text(d)} ({tagline}): "
                     f"{format_float(rates[d])}")
    lines.append(f"in-support success {format_float(float(np.mean(in_support)))}"
                 f", held-out success {format_float(float(np.mean(held)))}")

    payload = {
        "arm": args.arm,
        "rates": {_combo_text(d): r for d, r in sorted(rates.items())},
        "in_support_success": float(np.mean(in_support)),
        "held_out_success": float(np.mean(held)),
        "final": {k: final[k] for k in ("epoch", "denoise_loss",
                                        "overlap_loss", "mean_dice")},
        "epochs": tc.epochs,
        "parameters": denoiser.param_count(params),
    }
    digest = hashlib.sha256(
        dumps_json(_jsonable(dataset.manifest)).encode("utf-8")).hexdigest()

    out_root = Path(args.out)
    arm_dir = out_root / args.arm
    arm_dir.mkdir(parents=True, exist_ok=True)
    _write_metrics_csv(arm_dir / "metrics.csv", metrics)
    denoiser.save_params(params, arm_dir / "params.bin")

    inputs = ({str(args.config): file_digest(args.config)}
              if args.config else {})
    manifest = RunManifest(command="toy", config=_jsonable(cfg),
                           model_hash=digest, seed=int(cfg["seed"]),
                           inputs=inputs,
                           wall_clock_s=round(time.time() - t0, 6))
    print(f"run {manifest.run_id} (toy)")
    for line in lines:
        print(line)
    write_outputs(arm_dir, manifest, lines, _jsonable(payload))
    _emit_comparison(out_root)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and dispatch.
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiercm",
        description="Leveled latent-variable model toolkit: validation, "
                    "composability certificates, identifiability checks, "
                    "structure recovery, and a toy diffusion demo.")
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file's invariants")
    p.add_argument("model")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("composability",
                       help="certify which combinations compose")
    p.add_argument("model")
    p.add_argument("--space", required=True,
                   help="JSON file listing training combinations")
    p.add_argument("--candidates", default="cartesian",
                   help="'cartesian' or a JSON file of candidate combinations")
    p.add_argument("--grid", type=int, default=None,
                   help="force the sampled support route with this many "
                        "cells per axis")
    p.add_argument("--n", type=int, default=4000,
                   help="samples per combination for empirical supports")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_composability)

    p = sub.add_parser("identify", help="run identifiability checks")
    p.add_argument("model")
    p.add_argument("--checks", default="invertibility,ci,variability",
                   help="comma list from {invertibility, ci, variability}")
    p.add_argument("--level", type=int, default=1,
                   help="latent level for the ci and variability checks")
    p.add_argument("--inv-level", type=int, default=None,
                   help="level for the invertibility check "
                        "(default: the observation boundary)")
    p.add_argument("--probes", type=int, default=25)
    p.add_argument("--attempts", type=int, default=8)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("recover",
                       help="estimate latent structure from samples")
    p.add_argument("--batches", nargs="+", default=None,
                   help="sample CSV files (with .meta.json sidecars)")
    p.add_argument("--model", default=None,
                   help="model file to sample from instead of --batches")
    p.add_argument("--space", default=None,
                   help="JSON combinations to sample (with --model)")
    p.add_argument("--n", type=int, default=10000,
                   help="samples per combination (with --model)")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--test", default="partial-correlation",
                   choices=["partial-correlation", "binned-mi"])
    p.add_argument("--truth", default=None,
                   help="model file to score the recovered graph against")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("toy", help="train and evaluate the diffusion demo")
    p.add_argument("--config", default=None,
                   help="JSON config file (defaults cover the 16x16 fixture)")
    p.add_argument("--arm", default="full", choices=list(ARMS))
    p.add_argument("--seed", type=int, default=None,
                   help="override the training seed from the config")
    p.add_argument("--out", required=True,
                   help="output root; the arm writes to OUT/<arm>/")
    p.set_defaults(func=cmd_toy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"internal: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
