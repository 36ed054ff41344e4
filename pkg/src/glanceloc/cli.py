"""Command-line entry point.

Subcommands: gen-data, train, eval, inspect-prior, compare. Every
command reads an optional JSON config file with "corpus", "train" and
"eval" sections; individual flags and generic --set section.key=value
overrides win over the file. Unknown keys are rejected by name.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 numeric
failure during training.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from . import corpus as corpus_mod
from . import evaluation, matio, model, trainer
from .contrastive import SAMPLING_MODES, calibrate, consistency_scores
from .prior import DgaConfig, GaussianGrid, center_mask, dga_weights, \
    midpoint_weight_table, relevance, scale_index, triplet_weight_table
from .temporal_map import moment_grid

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

ABLATIONS = ("top1", "midpoint", "gaussian_only", "semantic_only", "full", "full+dga")
SWEEPABLE = ("k", "sigma", "tau", "tr", "alpha")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); keep the contract
        raise UsageError(message)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_section(instance, values, section):
    known = {f.name for f in fields(instance)}
    updates = {}
    for key, value in values.items():
        if key not in known:
            raise UsageError(f"unknown config key {section}.{key!r}")
        if key == "dga" and isinstance(value, dict):
            updates[key] = _apply_section(instance.dga, value, f"{section}.dga")
        else:
            updates[key] = value
    return replace(instance, **updates)


def load_config_file(path):
    """Read the JSON config file into (CorpusConfig, TrainConfig, EvalConfig)."""
    cfg = {"corpus": corpus_mod.CorpusConfig(), "train": trainer.TrainConfig(),
           "eval": evaluation.EvalConfig()}
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise IOError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    for section, values in doc.items():
        if section not in cfg:
            raise UsageError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise UsageError(f"config section {section!r} must be an object")
        cfg[section] = _apply_section(cfg[section], values, section)
    return cfg


def _apply_sets(cfg, set_args):
    for item in set_args or []:
        if "=" not in item:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) < 2 or parts[0] not in cfg:
            raise UsageError(f"--set key must start with corpus./train./eval., got {dotted!r}")
        section = parts[0]
        value = _parse_value(raw)
        tree = value
        for key in reversed(parts[1:]):
            tree = {key: tree}
        cfg[section] = _apply_section(cfg[section], tree, section)
    return cfg


def _on_off(text):
    if text not in ("on", "off"):
        raise UsageError(f"expected on|off, got {text!r}")
    return text == "on"


def _float_list(text):
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text):
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser():
    parser = _Parser(prog="glanceloc",
                     description="Glance-supervised moment localization on synthetic corpora.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a synthetic corpus",
                       description="Generate a corpus and write manifest + feature files.")
    p.add_argument("--config", help="JSON config file (corpus section)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--seed", type=int, help="override corpus.seed")
    p.add_argument("--set", action="append", metavar="SEC.KEY=VAL",
                   help="override any config field, e.g. corpus.num_videos=10")

    p = sub.add_parser("train", help="train a model on a corpus train split")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--config", help="JSON config file (train section)")
    p.add_argument("--out", required=True, help="output checkpoint directory")
    p.add_argument("--k", type=int, help="positives per query")
    p.add_argument("--sigma", type=float, help="static Gaussian width")
    p.add_argument("--tau", type=float, help="contrastive temperature")
    p.add_argument("--tr", type=float, help="relevance threshold for dynamic centers")
    p.add_argument("--alpha", type=float, help="relevance momentum factor")
    p.add_argument("--dga", type=_on_off, metavar="on|off",
                   help="dynamic Gaussian prior adjustment")
    p.add_argument("--weight-mode", choices=trainer.WEIGHT_MODES)
    p.add_argument("--sampling-mode", choices=SAMPLING_MODES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="SEC.KEY=VAL")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus test split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--n", type=_int_list, help="comma list of top-n values, default 1,5")
    p.add_argument("--m", type=_float_list, help="comma list of IoU thresholds, default 0.5,0.7")
    p.add_argument("--nms", help="NMS IoU threshold or 'none'")
    p.add_argument("--out", help="recall CSV path (default <model>/recall.csv)")
    p.add_argument("--config", help="JSON config file (eval section)")
    p.add_argument("--set", action="append", metavar="SEC.KEY=VAL")

    p = sub.add_parser("inspect-prior", help="dump prior vectors and weight table as CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--sample", required=True, help="query id, e.g. v0003_q1")
    p.add_argument("--out", required=True, help="CSV path; clip rows carry the scaled index, "
                   "Gaussian grid, relevance, center mask and dynamic grid; moment rows carry "
                   "triplet/midpoint weights and, with --model, consistency and calibrated prior")
    p.add_argument("--model", help="checkpoint directory (adds consistency columns)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--sigma", type=float)
    p.add_argument("--tr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--set", action="append", metavar="SEC.KEY=VAL")

    p = sub.add_parser("compare", help="train/evaluate ablations and hyperparameter sweeps")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--ablations", help=f"comma list from {', '.join(ABLATIONS)}")
    p.add_argument("--sweep", help="name=v1,v2,... over one of " + ", ".join(SWEEPABLE))
    p.add_argument("--out", required=True, help="consolidated CSV path")
    p.add_argument("--n", type=_int_list)
    p.add_argument("--m", type=_float_list)
    p.add_argument("--set", action="append", metavar="SEC.KEY=VAL")
    return parser


def _train_overrides(args, train_cfg):
    flag_map = {"k": "k", "sigma": "sigma", "tau": "tau", "epochs": "epochs",
                "batch_size": "batch_size", "lr": "learning_rate", "seed": "seed",
                "weight_mode": "weight_mode", "sampling_mode": "sampling_mode"}
    updates = {}
    for attr, field_name in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            updates[field_name] = value
    if getattr(args, "dga", None) is not None:
        updates["dga_enabled"] = args.dga
    dga_updates = {}
    if getattr(args, "tr", None) is not None:
        dga_updates["relevance_threshold"] = args.tr
    if getattr(args, "alpha", None) is not None:
        dga_updates["alpha"] = args.alpha
    if dga_updates:
        updates["dga"] = replace(train_cfg.dga, **dga_updates)
    return replace(train_cfg, **updates)


def _resolved_config_json(corpus_dir, train_cfg):
    doc = {"corpus_dir": corpus_dir, "train": asdict(train_cfg)}
    return json.dumps(doc, indent=2, sort_keys=True)


def cmd_gen_data(args):
    cfg = _apply_sets(load_config_file(args.config), args.set)
    corpus_cfg = cfg["corpus"]
    if args.seed is not None:
        corpus_cfg = replace(corpus_cfg, seed=args.seed)
    try:
        corpus_cfg.validate()
        corpus = corpus_mod.generate(corpus_cfg)
    except (ValueError, corpus_mod.GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    corpus_mod.save(corpus, args.out)
    n_train = sum(1 for t in corpus.splits if t == "train")
    print(f"wrote corpus to {args.out}: {corpus_cfg.num_videos} videos, "
          f"{len(corpus.samples)} queries ({n_train} train / "
          f"{len(corpus.samples) - n_train} test), "
          f"{corpus.stats.get('multi_event_queries', 0)} multi-event")
    return EXIT_OK


def cmd_train(args):
    cfg = _apply_sets(load_config_file(args.config), args.set)
    train_cfg = _train_overrides(args, cfg["train"])
    train_cfg.validate()
    corpus = corpus_mod.load(args.corpus)
    views = corpus.train_views()
    os.makedirs(args.out, exist_ok=True)
    resolved = _resolved_config_json(args.corpus, train_cfg)
    print(resolved)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        fh.write(resolved + "\n")
    state = trainer.train(views, train_cfg,
                          log_path=os.path.join(args.out, "train_log.csv"))
    model.save_params(state.params, args.out)
    print(f"trained {train_cfg.epochs} epochs on {len(views)} queries; "
          f"final mean loss {state.history[-1]:.6f}; checkpoint in {args.out}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _apply_sets(load_config_file(args.config), args.set)
    eval_cfg = cfg["eval"]
    if args.n is not None:
        eval_cfg = replace(eval_cfg, n_values=args.n)
    if args.m is not None:
        eval_cfg = replace(eval_cfg, iou_thresholds=args.m)
    if args.nms is not None:
        eval_cfg = replace(eval_cfg,
                           nms_threshold=None if args.nms == "none" else float(args.nms))
    eval_cfg.validate()
    corpus = corpus_mod.load(args.corpus)
    params = model.load_params(args.model)
    table = evaluation.evaluate_model(params, corpus.test_samples(), eval_cfg)
    print(table.format_table())
    out_path = args.out or os.path.join(args.model, "recall.csv")
    with open(out_path, "w") as fh:
        fh.write(table.to_csv())
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_inspect_prior(args):
    cfg = _apply_sets(load_config_file(args.config), args.set)
    train_cfg = cfg["train"]
    if args.sigma is not None:
        train_cfg = replace(train_cfg, sigma=args.sigma)
    dga_updates = {}
    if args.tr is not None:
        dga_updates["relevance_threshold"] = args.tr
    if args.alpha is not None:
        dga_updates["alpha"] = args.alpha
    if dga_updates:
        train_cfg = replace(train_cfg, dga=replace(train_cfg.dga, **dga_updates))
    train_cfg.validate()
    corpus = corpus_mod.load(args.corpus)
    try:
        sample = corpus.sample_by_query_id(args.sample)
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    params = model.load_params(args.model) if args.model else None
    n_clips = sample.clip_features.shape[0]
    if params is not None and train_cfg.dga.feature_source == "reduced":
        feats = sample.clip_features @ params.W1 + params.b1
        if params.activation == "relu":
            feats = np.maximum(feats, 0.0)
    else:
        feats = sample.clip_features
    r_bar = relevance(feats, sample.glance)  # first momentum update copies r
    mask = center_mask(r_bar, train_cfg.dga.relevance_threshold)
    dga_sigma = train_cfg.dga.sigma if train_cfg.dga.sigma is not None else train_cfg.sigma
    dyn = dga_weights(r_bar, mask, n_clips, dga_sigma, train_cfg.dga)
    static = GaussianGrid(n_clips, train_cfg.sigma).weights(sample.glance)
    starts, ends = moment_grid(n_clips)
    w_triplet = triplet_weight_table(static, starts, ends)
    w_mid = midpoint_weight_table(static, starts, ends)

    consistency = calibrated = None
    if params is not None:
        trace = model.forward(params, sample.clip_features, sample.query_feature)
        consistency = consistency_scores(trace.query_emb, trace.video.moment_emb)
        calibrated = calibrate(w_triplet, consistency)

    header = ["kind", "i", "j", "scaled_index", "gaussian", "relevance", "mask",
              "dynamic_gaussian", "w_triplet", "w_midpoint"]
    if params is not None:
        header += ["consistency", "calibrated"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(n_clips):
            row = ["clip", i, "", repr(scale_index(i, n_clips)), repr(float(static[i])),
                   repr(float(r_bar[i])), int(mask[i]), repr(float(dyn[i])), "", ""]
            if params is not None:
                row += ["", ""]
            writer.writerow(row)
        for z in range(starts.shape[0]):
            row = ["moment", int(starts[z]), int(ends[z]), "", "", "", "", "",
                   repr(float(w_triplet[z])), repr(float(w_mid[z]))]
            if params is not None:
                row += [repr(float(consistency[z])), repr(float(calibrated[z]))]
            writer.writerow(row)
    print(f"wrote {args.out} ({n_clips} clip rows, {starts.shape[0]} moment rows)")
    return EXIT_OK


def _ablation_config(name, base):
    if name == "top1":
        return replace(base, k=1, dga_enabled=False)
    if name == "midpoint":
        return replace(base, weight_mode="midpoint", dga_enabled=False)
    if name == "gaussian_only":
        return replace(base, sampling_mode="gaussian_only", dga_enabled=False)
    if name == "semantic_only":
        return replace(base, sampling_mode="semantic_only", dga_enabled=False)
    if name == "full":
        return replace(base, dga_enabled=False)
    if name == "full+dga":
        return replace(base, dga_enabled=True)
    raise UsageError(f"unknown ablation {name!r}; valid: {', '.join(ABLATIONS)}")


def _sweep_configs(spec_text, base):
    if "=" not in spec_text:
        raise UsageError(f"--sweep expects name=v1,v2,..., got {spec_text!r}")
    name, raw = spec_text.split("=", 1)
    if name not in SWEEPABLE:
        raise UsageError(f"unknown sweep parameter {name!r}; valid: {', '.join(SWEEPABLE)}")
    out = []
    for token in raw.split(","):
        value = float(token)
        full = replace(base, dga_enabled=True)
        if name == "k":
            cfgv = replace(full, k=int(value))
        elif name == "sigma":
            cfgv = replace(full, sigma=value)
        elif name == "tau":
            cfgv = replace(full, tau=value)
        elif name == "tr":
            cfgv = replace(full, dga=replace(full.dga, relevance_threshold=value))
        else:
            cfgv = replace(full, dga=replace(full.dga, alpha=value))
        out.append((f"{name}={token}", cfgv))
    return out


def cmd_compare(args):
    cfg = _apply_sets(load_config_file(args.config), args.set)
    base = cfg["train"]
    eval_cfg = cfg["eval"]
    if args.n is not None:
        eval_cfg = replace(eval_cfg, n_values=args.n)
    if args.m is not None:
        eval_cfg = replace(eval_cfg, iou_thresholds=args.m)
    eval_cfg.validate()
    variants = []
    if args.ablations:
        for name in args.ablations.split(","):
            variants.append((name.strip(), _ablation_config(name.strip(), base)))
    if args.sweep:
        variants.extend(_sweep_configs(args.sweep, base))
    if not variants:
        raise UsageError("compare needs --ablations and/or --sweep")
    corpus = corpus_mod.load(args.corpus)
    views = corpus.train_views()
    test = corpus.test_samples()
    rows = []
    for name, variant_cfg in variants:
        variant_cfg.validate()
        state = trainer.train(views, variant_cfg)
        table = evaluation.evaluate_model(state.params, test, eval_cfg)
        for (n, m) in sorted(table.entries):
            rows.append((name, n, m, table.entries[(n, m)], table.num_queries))
        print(f"{name}: " + "  ".join(
            f"R@{n},IoU={m:g}={table.entries[(n, m)]:.4f}" for n, m in sorted(table.entries)))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "n", "m", "recall", "num_queries"])
        for name, n, m, rec, total in rows:
            writer.writerow([name, n, repr(m), repr(rec), total])
    print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect-prior": cmd_inspect_prior,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except trainer.TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (corpus_mod.CorpusError, model.CheckpointError, matio.MatrixIOError,
            OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
