"""Command-line interface: ``realmlp {train,predict,evaluate,hpo,ensemble,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from realmlp import bench, modelfile
from realmlp.config import PRESETS, default_preset, load_config, preset
from realmlp.dataio import DatasetSchema, load_csv, make_split
from realmlp.ensemble import fit_ensemble
from realmlp.hpo import holdout_metric, random_search
from realmlp.train import TrainedModel, predict, train

log = logging.getLogger("realmlp")


class CLIError(Exception):
    pass


def _jobs_default() -> int:
    try:
        return max(1, int(os.environ.get("REALMLP_JOBS", "1")))
    except ValueError:
        return 1


def _config(args, task: str):
    name = args.preset or default_preset(task)
    if name.endswith("-class") != (task == "classification"):
        raise CLIError(f"preset {name!r} does not match task {task!r}")
    cfg = preset(name)
    if args.config:
        cfg = load_config(cfg, args.config)
    if getattr(args, "stop_metric", None):
        cfg = cfg.replace(stop_metric=args.stop_metric)
    return name, cfg


def _load_for_model(tm: TrainedModel, path, require_target: bool):
    schema = DatasetSchema(tuple(tuple(c) for c in tm.schema_columns), tm.task)
    return load_csv(path, schema, categories=tm.categories, classes=tm.classes, require_target=require_target)


def cmd_train(args) -> int:
    schema = DatasetSchema.read(args.schema)
    data = load_csv(args.data, schema)
    name, cfg = _config(args, schema.task)
    split = make_split(data.n_rows, args.seed)
    tm, rec = train(data, split.train, split.val, cfg, seed=args.seed, preset=name)
    modelfile.save(tm, args.out)
    rec.write_csv(f"{args.out}.epochs.csv")
    print(f"best_epoch,{rec.best_epoch}")
    print(f"val_{rec.stop_metric},{bench.format_float(rec.best_value)}")
    print(f"test_error,{bench.format_float(holdout_metric(data, tm, split.test))}")
    return 0


def _write_predictions(tm: TrainedModel, pred: np.ndarray, out) -> None:
    lines = []
    if tm.task == "classification":
        lines.append(",".join([f"prob_{c}" for c in tm.classes] + ["label"]))
        for row in pred:
            lines.append(",".join([bench.format_float(float(v)) for v in row] + [tm.classes[int(np.argmax(row))]]))
    else:
        lines.append("prediction")
        lines.extend(bench.format_float(float(v)) for v in pred)
    Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_predict(args) -> int:
    tm = modelfile.load(args.model)
    data = _load_for_model(tm, args.data, require_target=False)
    _write_predictions(tm, predict(tm, data), args.out)
    return 0


def cmd_evaluate(args) -> int:
    tm = modelfile.load(args.model)
    data = _load_for_model(tm, args.data, require_target=True)
    pred = predict(tm, data)
    metric = args.metric
    if tm.task == "regression" and metric != "nrmse":
        raise CLIError(f"metric {metric!r} needs a classification model")
    if tm.task == "classification" and metric == "nrmse":
        raise CLIError("metric 'nrmse' needs a regression model")
    if metric == "err":
        value = bench.classification_error(data.y, np.argmax(pred, axis=1))
    elif metric == "nrmse":
        value = bench.nrmse(data.y, pred)
    elif metric == "auc-ovr":
        value = bench.auroc_ovr(data.y, pred)
    else:
        value = bench.cross_entropy(data.y, pred)
    print(f"{metric},{bench.format_float(value)}")
    return 0


def cmd_hpo(args) -> int:
    schema = DatasetSchema.read(args.schema)
    data = load_csv(args.data, schema)
    name, base = _config(args, schema.task)
    split = make_split(data.n_rows, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = random_search(data, split, steps=args.steps, seed=args.seed, base=base, jobs=args.jobs)
    res.write_log(out / "trials.csv")
    res.model.preset = "hpo"
    modelfile.save(res.model, out / "best.rmlp")
    print(f"best_trial,{res.best.index}")
    print(f"val_metric,{bench.format_float(res.best.val_metric)}")
    print(f"test_metric,{bench.format_float(res.best.test_metric)}")
    return 0


def cmd_ensemble(args) -> int:
    schema = DatasetSchema.read(args.schema)
    data = load_csv(args.data, schema)
    name, cfg = _config(args, schema.task)
    split = make_split(data.n_rows, args.seed)
    stopping = {"indiv": "individual", "individual": "individual", "joint": "joint"}[args.stopping]
    ens = fit_ensemble(data, split.train_val, cfg, mode=args.mode, n_members=args.members,
                       stopping=stopping, seed=args.seed, preset=name, jobs=args.jobs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, m in enumerate(ens.members):
        fname = f"member{i}.rmlp"
        modelfile.save(m, out / fname)
        files.append(fname)
    manifest = {"mode": ens.mode, "stopping": ens.stopping, "members": files,
                "epochs": [int(e) for e in ens.epochs], "seed": args.seed, "preset": name}
    (out / "ensemble.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    pred = ens.predict(data, split.test)
    if data.task == "classification":
        err = bench.classification_error(data.y[split.test], np.argmax(pred, axis=1))
    else:
        err = bench.nrmse(data.y[split.test], pred)
    print(f"epochs,{' '.join(str(e) for e in ens.epochs)}")
    print(f"test_error,{bench.format_float(err)}")
    return 0


def cmd_bench(args) -> int:
    table = bench.read_errors(args.errors, args.groups)
    rows = bench.report(table, args.agg, args.eps, args.ci)
    if args.out:
        bench.write_rows(rows, path=args.out)
    else:
        bench.write_rows(rows, fh=sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="realmlp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def model_opts(sp, with_stop=False):
        sp.add_argument("--data", required=True)
        sp.add_argument("--schema", required=True)
        sp.add_argument("--preset", choices=PRESETS)
        sp.add_argument("--config", help="file of 'key = value' overrides")
        sp.add_argument("--seed", type=int, default=0)
        if with_stop:
            sp.add_argument("--stop-metric", choices=["err", "rmse", "ce"])

    sp = sub.add_parser("train", help="train one model")
    model_opts(sp, with_stop=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="write predictions for a CSV file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="score a model on a labelled CSV file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--metric", choices=["err", "nrmse", "auc-ovr", "ce"], required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("hpo", help="random search over the RealMLP-HPO space")
    model_opts(sp)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--jobs", type=int, default=_jobs_default())
    sp.set_defaults(func=cmd_hpo)

    sp = sub.add_parser("ensemble", help="bagging/refitting ensemble")
    model_opts(sp)
    sp.add_argument("--mode", choices=["bagging", "refitting"], default="bagging")
    sp.add_argument("--members", type=int, choices=[1, 5], default=5)
    sp.add_argument("--stopping", choices=["indiv", "individual", "joint"], default="indiv")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--jobs", type=int, default=_jobs_default())
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("bench", help="aggregate a method x dataset x split error table")
    sp.add_argument("--errors", required=True, help="CSV method,dataset,split,error")
    sp.add_argument("--groups", help="CSV dataset,group (default: every dataset its own group)")
    sp.add_argument("--agg", choices=["sgm", "arith", "rank", "norm"], default="sgm")
    sp.add_argument("--eps", type=float, default=0.01)
    sp.add_argument("--ci", action="store_true", help="add 95%% Student-t confidence bounds")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CLIError, ValueError, KeyError, OSError, RuntimeError) as e:
        print(f"realmlp {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
