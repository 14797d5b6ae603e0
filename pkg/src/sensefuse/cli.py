"""Command-line orchestration: synth, run, predict, report.

All outputs are plain CSV/text written deterministically, so a rerun with
the same seed and config produces byte-identical files.
"""

import argparse
import json
import math
import os
import sys

import numpy as np
import yaml

from . import evaluation
from .core import (
    ConstructId,
    JOB_CONSTRUCTS,
    PipelineConfig,
    THEORY_CONSTRUCTS,
    config_to_dict,
    load_config,
    validate_config,
)
from .ensemble import PredictionBundle, build_bundle, run_joint_model
from .errors import SensefuseError
from .impute import write_audit_csv
from .ingest import Universe, load_universe
from .synth import CohortSpec, generate, write_cohort


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Run orchestration (also the library entry point used by the test suite)
# ---------------------------------------------------------------------------


def collect_metric_rows(result) -> list:
    rows = []
    for cid in ConstructId:
        res = result.constructs.get(cid)
        if res is None or res.skipped is not None:
            continue
        for rec in sorted(res.fold_records, key=lambda r: r.fold):
            rows.append((cid, rec.fold, rec.smape, rec.tau, rec.gemm_tau,
                         rec.baseline_smape))
    return rows


def compute_delta_tau(result, universe: Universe) -> dict:
    """Fold-paired model-vs-theory comparison for the job constructs.

    The theory side fits a monotone composite of the ground-truth
    personality and cognitive columns on each fold's training rows.
    """
    cfg = result.config
    gt = universe.ground_truth.subset(result.participants)
    row_of = {p: i for i, p in enumerate(result.participants)}
    theory_cols = [gt.column(c) for c in THEORY_CONSTRUCTS if c in gt.values]
    if not theory_cols:
        return {}
    theory = np.column_stack(theory_cols)
    fold_of = dict(result.plan.assignment)
    summaries = {}
    for cid in JOB_CONSTRUCTS:
        res = result.constructs.get(cid)
        if res is None or res.skipped is not None or cid not in gt.values:
            continue
        y = gt.column(cid)
        folds, model_taus = [], []
        for rec in sorted(res.fold_records, key=lambda r: r.fold):
            k = rec.fold
            tr = [row_of[p] for p in result.train_pids if fold_of[p] != k]
            te = [row_of[p] for p in result.train_pids if fold_of[p] == k]
            tr = [i for i in tr if math.isfinite(y[i])
                  and np.all(np.isfinite(theory[i]))]
            te = [i for i in te if math.isfinite(y[i])
                  and np.all(np.isfinite(theory[i]))]
            if len(tr) < 3 or len(te) < 2:
                continue
            folds.append((theory[tr], y[tr], theory[te], y[te]))
            model_taus.append(rec.tau)
        if not folds:
            continue
        theory_taus = evaluation.fold_theory_taus(
            folds, restarts=cfg.gemm_restarts, iters=cfg.gemm_iters,
            seed=cfg.seed)
        paired = [(m, t) for m, t in zip(model_taus, theory_taus)
                  if math.isfinite(m) and math.isfinite(t)]
        if paired:
            summaries[cid] = evaluation.delta_tau([m for m, _ in paired],
                                                  [t for _, t in paired])
    return summaries


def compute_discriminant(result, universe: Universe):
    """Correlations among out-of-fold predictions (upper triangle) and among
    ground-truth values (lower triangle) over the training participants."""
    gt = universe.ground_truth.subset(result.train_pids)
    preds, truths = {}, {}
    for cid in ConstructId:
        res = result.constructs.get(cid)
        if res is not None and res.skipped is None and res.oof:
            preds[cid] = np.array([res.oof.get(p, math.nan)
                                   for p in result.train_pids])
        if cid in gt.values:
            truths[cid] = gt.column(cid)
    return evaluation.discriminant_matrix(preds, truths, list(ConstructId))


def fold_taus_by_construct(result) -> dict:
    out = {}
    for cid in ConstructId:
        res = result.constructs.get(cid)
        if res is None or res.skipped is not None:
            continue
        out[cid] = [rec.tau for rec in sorted(res.fold_records,
                                              key=lambda r: r.fold)]
    return out


def write_manifest(path: str, result):
    cfg = result.config
    lines = [
        f"seed: {cfg.seed}",
        f"config_hash: {cfg.config_hash()}",
        f"participants: {len(result.participants)}",
        f"training: {len(result.train_pids)}",
        f"validation: {len(result.val_pids)}",
        f"folds: {result.plan.n_folds}",
        f"proxy_pass: {'ran' if result.proxy_pass_ran else 'skipped'}",
        f"fusion_mode: {cfg.fusion_mode}",
        "",
    ]
    for cid in ConstructId:
        res = result.constructs.get(cid)
        if res is None:
            continue
        if res.skipped is not None:
            lines.append(f"{cid.value}: skipped ({res.skipped})")
        else:
            lines.append(f"{cid.value}: selected {res.selected.label()} "
                         f"mean_score {res.mean_score!r}")
    _write_text(path, "\n".join(lines) + "\n")


def write_masks_csv(path: str, result):
    lines = ["construct,stage,feature,score"]
    for cid in ConstructId:
        res = result.constructs.get(cid)
        if res is None or res.skipped is not None:
            continue
        for stage in sorted(res.final_masks):
            mask = res.final_masks[stage]
            for name, score in mask.entries:
                lines.append(f"{cid.value},{stage},{name},{score!r}")
    _write_text(path, "\n".join(lines) + "\n")


def run_and_report(config: PipelineConfig, universe: Universe, out_dir: str):
    """Execute the full pipeline and write every report artifact."""
    os.makedirs(out_dir, exist_ok=True)
    result = run_joint_model(universe, config)
    bundle = build_bundle(result)

    models_dir = os.path.join(out_dir, "models")
    os.makedirs(models_dir, exist_ok=True)
    with open(os.path.join(models_dir, "bundle.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        json.dump(bundle.to_dict(), fh, separators=(",", ":"))
        fh.write("\n")
    with open(os.path.join(models_dir, "config.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        json.dump(config_to_dict(config), fh, sort_keys=True,
                  separators=(",", ":"))
        fh.write("\n")
    for cid, model in sorted(bundle.models.items(), key=lambda kv: kv[0].value):
        with open(os.path.join(models_dir, f"{cid.value}.json"), "w",
                  encoding="utf-8", newline="\n") as fh:
            json.dump(model.to_dict(), fh, separators=(",", ":"))
            fh.write("\n")

    metric_rows = collect_metric_rows(result)
    evaluation.write_metrics_csv(os.path.join(out_dir, "metrics.csv"),
                                 metric_rows)
    reliability = evaluation.reliability_report(
        fold_taus_by_construct(result),
        bootstrap_samples=config.bootstrap_samples, seed=config.seed)
    evaluation.write_reliability_csv(os.path.join(out_dir, "reliability.csv"),
                                     reliability)
    evaluation.write_discriminant_csv(os.path.join(out_dir, "discriminant.csv"),
                                      compute_discriminant(result, universe))
    deltas = compute_delta_tau(result, universe)
    evaluation.write_delta_tau_csv(os.path.join(out_dir, "delta_tau.csv"),
                                   deltas)
    _write_text(os.path.join(out_dir, "summary.txt"),
                evaluation.render_summary_text(metric_rows, deltas))
    write_manifest(os.path.join(out_dir, "manifest.txt"), result)
    write_masks_csv(os.path.join(out_dir, "masks.csv"), result)
    if result.final_pipe is not None and \
            hasattr(result.final_pipe.imputer_, "last_audit_"):
        write_audit_csv(os.path.join(out_dir, "imputation_audit.csv"),
                        result.final_pipe.imputer_.last_audit_)
    if result.final_pipe is not None and result.final_pipe.social_pca_ is not None:
        from .core import ModalityKind
        from .reduce import write_loadings_csv
        social_cols = result.final_pipe.block_columns_.get(
            ModalityKind.SOCIAL_MEDIA)
        dropped = set(result.final_pipe.imputer_.dropped_.get(
            ModalityKind.SOCIAL_MEDIA, []))
        if social_cols is not None:
            kept = [c for c in social_cols if c not in dropped]
            write_loadings_csv(os.path.join(out_dir, "social_pca_loadings.csv"),
                               result.final_pipe.social_pca_, kept)

    # validation predictions, written through the same path `predict` uses
    if result.val_pids:
        preds = {}
        for cid, res in result.constructs.items():
            if res.skipped is None and res.validation:
                preds[cid] = res.validation
        _write_predictions_csv(os.path.join(out_dir, "validation_predictions.csv"),
                               result.val_pids, preds)
    return result


def _write_predictions_csv(path: str, participants, preds: dict):
    cids = [c for c in ConstructId if c in preds]
    lines = ["participant_id," + ",".join(c.value for c in cids)]
    for pid in participants:
        cells = [pid]
        for c in cids:
            v = preds[c].get(pid)
            cells.append("" if v is None else repr(float(v)))
        lines.append(",".join(cells))
    _write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if "snr" in raw and isinstance(raw["snr"], dict):
        raw["snr"] = {ConstructId(k): float(v) for k, v in raw["snr"].items()}
    spec = CohortSpec(**raw)
    universe, _ = generate(spec)
    write_cohort(universe, args.out)
    print(f"wrote cohort of {spec.n_participants} participants to {args.out}")
    return 0


def _load_run_config(args) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config, seed_override=args.seed)
    else:
        cfg = validate_config({} if args.seed is None else {"seed": args.seed})
    overrides = {}
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.skip_proxy_pass:
        overrides["skip_proxy_pass"] = True
    if args.fusion_mode is not None:
        overrides["fusion_mode"] = args.fusion_mode
    if overrides:
        d = config_to_dict(cfg)
        d.update(overrides)
        cfg = validate_config(d)
    return cfg


def cmd_run(args) -> int:
    config = _load_run_config(args)
    universe = load_universe(args.data, config.registry(),
                             config.screen_rule_map())
    run_and_report(config, universe, args.out)
    print(f"run complete; reports in {args.out}")
    return 0


def cmd_predict(args) -> int:
    config_path = os.path.join(args.models, "config.json")
    bundle_path = os.path.join(args.models, "bundle.json")
    with open(config_path, "r", encoding="utf-8") as fh:
        config = validate_config(json.load(fh))
    with open(bundle_path, "r", encoding="utf-8") as fh:
        bundle = PredictionBundle.from_dict(json.load(fh), config)
    universe = load_universe(args.data, config.registry(),
                             config.screen_rule_map(),
                             require_ground_truth=False)
    predictions = bundle.predict(universe)
    if not predictions:
        raise SensefuseError("bundle contains no usable models")
    participants = next(iter(predictions.values()))[0]
    preds = {cid: dict(zip(pids, vals))
             for cid, (pids, vals) in predictions.items()}
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    _write_predictions_csv(args.out, participants, preds)
    print(f"wrote predictions for {len(participants)} participants to {args.out}")
    return 0


def cmd_report(args) -> int:
    metrics_path = os.path.join(args.run, "metrics.csv")
    rows = []
    with open(metrics_path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        for line in fh:
            cells = line.rstrip("\n").split(",")
            parse = lambda s: float(s) if s else math.nan
            rows.append((ConstructId(cells[0]), int(cells[1]), parse(cells[2]),
                         parse(cells[3]), parse(cells[4]), parse(cells[5])))
    print(evaluation.render_summary_text(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensefuse",
        description="Multimodal sensing features and joint construct prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic cohort")
    p_synth.add_argument("--spec", required=True, help="cohort spec YAML")
    p_synth.add_argument("--out", required=True, help="output data directory")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="train, evaluate, and write reports")
    p_run.add_argument("--config", default=None, help="pipeline config YAML")
    p_run.add_argument("--data", required=True, help="input data directory")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--skip-proxy-pass", action="store_true")
    p_run.add_argument("--fusion-mode",
                       choices=["feature", "per_modality_mean"], default=None)
    p_run.set_defaults(func=cmd_run)

    p_pred = sub.add_parser("predict", help="apply serialized models to new data")
    p_pred.add_argument("--models", required=True, help="models directory")
    p_pred.add_argument("--data", required=True, help="new data directory")
    p_pred.add_argument("--out", required=True, help="predictions CSV path")
    p_pred.set_defaults(func=cmd_predict)

    p_rep = sub.add_parser("report", help="render the text summary of a run")
    p_rep.add_argument("--run", required=True, help="run output directory")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SensefuseError, OSError, ValueError, yaml.YAMLError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        out_dir = getattr(args, "out", None)
        if out_dir and os.path.isdir(os.path.dirname(os.path.abspath(out_dir))):
            try:
                os.makedirs(out_dir, exist_ok=True)
                with open(os.path.join(out_dir, "error.json"), "w",
                          encoding="utf-8") as fh:
                    json.dump(record, fh)
            except OSError:
                pass
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
