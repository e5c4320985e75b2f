"""Command-line entry point for the whole pipeline.

Subcommands: synth, split, train, eval-match, eval-recall, probe,
export-embeddings, stats, serve. Every run that writes an output directory
also echoes its effective configuration there (config_used.cfg) for
provenance. Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .configfile import parse_kv, write_kv
from .datamodel import (
    FeatureStore, SplitSpec, SynthConfig, load_manifest, save_synth,
    split_by_identity, synth_generate,
)
from .evaluation import Grouping, export_embeddings, make_match_trials, recall_at_k, run_matching
from .model import load_checkpoint, save_checkpoint
from .numerics import Rng
from .probes import ProbeSpec, probe_dataset, run_probe
from .stats import anova_oneway, one_sample_t, tukey_hsd
from .trainer import TrainConfig, train


def _echo_config(out_dir, mapping):
    write_kv({k: v for k, v in mapping.items() if v is not None},
             Path(out_dir) / "config_used.cfg")


def _write_jsonl(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def _load_split(path):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return SplitSpec(train_identities=tuple(obj["train_identities"]),
                     test_identities=tuple(obj["test_identities"]),
                     seed=int(obj.get("seed", 0)))


def cmd_synth(args):
    cfg = SynthConfig(n_identities=args.ids, clips_per_identity=args.clips,
                      latent_dim=args.latent, shared_ratio=args.shared,
                      noise_sigma=args.noise, feature_dim=args.dim,
                      seed=args.seed)
    manifest, feats = synth_generate(cfg)
    out = Path(args.out)
    manifest_path = save_synth(manifest, feats, out)
    _echo_config(out, {**asdict(cfg), "subcommand": "synth",
                       "axis_scales": ",".join(map(str, cfg.axis_scales))})
    print(f"wrote {len(manifest.records)} records "
          f"({cfg.n_identities} identities) to {manifest_path}")
    return 0


def cmd_split(args):
    manifest = load_manifest(args.manifest, check_features=False)
    split = split_by_identity(manifest, args.n_train, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({
        "train_identities": list(split.train_identities),
        "test_identities": list(split.test_identities),
        "seed": split.seed,
    }, indent=2) + "\n", encoding="utf-8")
    print(f"split: {len(split.train_identities)} train / "
          f"{len(split.test_identities)} test -> {out}")
    return 0


def cmd_train(args):
    overrides = {}
    if args.config:
        overrides.update(parse_kv(args.config))
    for key in ("iterations", "batch_size", "lr", "lr_decay_every",
                "hard_mining_start", "hard_mining_pool", "hard_mining_keep",
                "hidden_dim", "embed_dim", "seed", "checkpoint_every",
                "direction", "objective"):
        flag = getattr(args, key, None)
        if flag is not None:
            overrides[key] = flag
    ints = {"iterations", "batch_size", "lr_decay_every", "hard_mining_start",
            "hard_mining_pool", "hard_mining_keep", "hidden_dim", "embed_dim",
            "seed", "checkpoint_every"}
    floats = {"lr", "lr_decay_factor", "beta1", "beta2", "epsilon"}
    kwargs = {}
    for key, value in overrides.items():
        if key in ints:
            kwargs[key] = int(value)
        elif key in floats:
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    cfg = TrainConfig(**kwargs)

    manifest = load_manifest(args.manifest)
    split = _load_split(args.split)
    store = FeatureStore(manifest, l2_normalize=args.normalize)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, log = train(manifest, split, cfg, store, checkpoint_dir=out)
    save_checkpoint(params, out / "model.ckpt")
    log.save(out / "train.log")
    _echo_config(out, {**asdict(cfg), "subcommand": "train",
                       "manifest": args.manifest, "split": args.split,
                       "normalize_features": args.normalize})
    last = log.records[-1].loss if log.records else float("nan")
    print(f"trained {cfg.iterations} iterations "
          f"({cfg.objective}, {cfg.direction}); final loss {last:.4f}; "
          f"checkpoint -> {out / 'model.ckpt'}")
    return 0


def _parse_grouping(args, parser):
    if args.grouping == "GEFA":
        if not args.gefa:
            parser.error("--grouping GEFA requires --gefa g,e,f,a "
                         "(use '-' for a free slot)")
        parts = args.gefa.split(",")
        if len(parts) != 4:
            parser.error("--gefa needs gender,ethnicity,fluency,age_group")
        gender = None if parts[0] in ("-", "") else parts[0]
        ethnicity = None if parts[1] in ("-", "") else int(parts[1])
        fluency = None if parts[2] in ("-", "") else parts[2]
        age = None if parts[3] in ("-", "") else parts[3]
        return Grouping("GEFA", gefa_target=(gender, ethnicity, fluency, age))
    return Grouping(args.grouping)


def cmd_eval_match(args, parser):
    grouping = _parse_grouping(args, parser)
    manifest = load_manifest(args.manifest)
    split = _load_split(args.split)
    params = load_checkpoint(args.checkpoint)
    store = FeatureStore(manifest, l2_normalize=args.normalize)
    rng = Rng(args.seed)
    trials = make_match_trials(manifest, split.test_identities, grouping, rng,
                               direction=args.direction,
                               trials_per_probe=args.trials_per_probe)
    report = run_matching(params, trials, store, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"row": "summary", "accuracy": report.accuracy,
             "n_trials": report.n_trials, "n_ties": report.n_ties,
             "grouping": grouping.mode, "gefa_target": grouping.gefa_target,
             "direction": args.direction, "seed": report.seed}]
    rows += [{"row": "identity", "identity_id": ident, "difficulty": diff}
             for ident, diff in sorted(report.per_identity_difficulty.items())]
    _write_jsonl(out / "match_report.jsonl", rows)
    _echo_config(out, {"subcommand": "eval-match", "manifest": args.manifest,
                       "split": args.split, "checkpoint": args.checkpoint,
                       "grouping": args.grouping, "gefa": args.gefa,
                       "direction": args.direction,
                       "trials_per_probe": args.trials_per_probe,
                       "seed": args.seed,
                       "normalize_features": args.normalize})
    print(f"matching accuracy [{grouping.mode}] = {report.accuracy:.4f} "
          f"over {report.n_trials} trials ({report.n_ties} ties)")
    return 0


def cmd_eval_recall(args):
    manifest = load_manifest(args.manifest)
    split = _load_split(args.split)
    params = load_checkpoint(args.checkpoint)
    store = FeatureStore(manifest, l2_normalize=args.normalize)
    ks = [int(k) for k in args.ks.split(",")]
    recalls = recall_at_k(params, manifest, split.test_identities, store,
                          set_size=args.set_size, ks=ks, rng=Rng(args.seed),
                          repeats=args.repeats, direction=args.direction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"row": "summary", "set_size": args.set_size,
             "repeats": args.repeats, "direction": args.direction,
             "seed": args.seed}]
    rows += [{"row": "recall", "k": k, "recall_percent": recalls[k]}
             for k in ks]
    _write_jsonl(out / "recall.jsonl", rows)
    _echo_config(out, {"subcommand": "eval-recall", "manifest": args.manifest,
                       "split": args.split, "checkpoint": args.checkpoint,
                       "set_size": args.set_size, "ks": args.ks,
                       "repeats": args.repeats, "direction": args.direction,
                       "seed": args.seed,
                       "normalize_features": args.normalize})
    row = "  ".join(f"R@{k}={recalls[k]:.1f}%" for k in ks)
    print(f"recall (N={args.set_size}, {args.direction}): {row}")
    return 0


def cmd_probe(args):
    manifest = load_manifest(args.manifest)
    params = load_checkpoint(args.checkpoint)
    store = FeatureStore(manifest, l2_normalize=args.normalize)
    identities = None
    if args.split:
        split = _load_split(args.split)
        identities = split.test_identities if args.side == "test" \
            else split.train_identities
    spec = ProbeSpec(attribute=args.attribute, modality=args.modality,
                     n_trials=args.trials, seed=args.seed)
    X, y, ids = probe_dataset(params, manifest, store, args.attribute,
                              args.modality, identities)
    res = run_probe(X, y, ids, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "probe.jsonl", [{
        "attribute": args.attribute, "modality": args.modality,
        "map_mean": res.map_mean, "ci_halfwidth": res.ci_halfwidth,
        "chance_flagged": res.chance_flagged,
        "per_trial_aps": res.per_trial_aps,
        "hyperparameters": asdict(res.spec),
    }])
    _echo_config(out, {"subcommand": "probe", "manifest": args.manifest,
                       "checkpoint": args.checkpoint,
                       "attribute": args.attribute, "modality": args.modality,
                       "trials": args.trials, "seed": args.seed,
                       "split": args.split, "side": args.side,
                       "normalize_features": args.normalize})
    flag = "  [within chance band]" if res.chance_flagged else ""
    print(f"probe {args.attribute} on {args.modality}: "
          f"mAP {100 * res.map_mean:.1f}% +/- {100 * res.ci_halfwidth:.1f}%"
          f"{flag}")
    return 0


def cmd_export(args):
    manifest = load_manifest(args.manifest)
    params = load_checkpoint(args.checkpoint)
    store = FeatureStore(manifest, l2_normalize=args.normalize)
    identities = None
    if args.split:
        split = _load_split(args.split)
        identities = split.test_identities if args.side == "test" \
            else split.train_identities
    n = export_embeddings(params, manifest, store, args.out, identities)
    print(f"exported {n} embedding rows to {args.out}")
    return 0


def cmd_stats(args):
    groups = []
    for line in Path(args.groups).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            groups.append((obj["label"], [float(v) for v in obj["values"]]))
    rows = []
    print(f"{'group':<20} {'mean':>7} {'sd':>7} {'t (n)':>14} {'p':>10}")
    for label, values in groups:
        res = one_sample_t(values, args.mu0)
        n = len(values)
        mean = sum(values) / n
        sd = (sum((v - mean) ** 2 for v in values) / (n - 1)) ** 0.5
        rows.append({"label": label, "n": n, "mean": mean, "sd": sd,
                     "t": res.statistic, "p_value": res.p_value,
                     "significant_at": res.significant_at})
        print(f"{label:<20} {mean:>7.3f} {sd:>7.3f} "
              f"{res.statistic:>8.2f} ({n:>3}) {res.p_value:>10.2e}")
    out_rows = [dict(row, row="group", mu0=args.mu0) for row in rows]
    if len(groups) >= 2:
        anova = anova_oneway([g[1] for g in groups])
        tukey = tukey_hsd([g[1] for g in groups], alpha=args.alpha,
                          seed=args.seed, labels=[g[0] for g in groups])
        print(f"ANOVA: F{anova.df} = {anova.statistic:.2f}, "
              f"p = {anova.p_value:.2e}")
        out_rows.append({"row": "anova", "f": anova.statistic,
                         "df": list(anova.df), "p_value": anova.p_value})
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                verdict = "significant" if tukey.significant[i, j] \
                    else "not significant"
                print(f"Tukey {tukey.labels[i]} vs {tukey.labels[j]}: "
                      f"q = {tukey.q[i, j]:.2f}, p = {tukey.p_values[i, j]:.3f} "
                      f"({verdict} at alpha={args.alpha})")
                out_rows.append({"row": "tukey", "a": tukey.labels[i],
                                 "b": tukey.labels[j],
                                 "q": float(tukey.q[i, j]),
                                 "p_value": float(tukey.p_values[i, j]),
                                 "significant": bool(tukey.significant[i, j]),
                                 "alpha": args.alpha})
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_jsonl(out / "stats.jsonl", out_rows)
        _echo_config(out, {"subcommand": "stats", "groups": args.groups,
                           "mu0": args.mu0, "alpha": args.alpha,
                           "seed": args.seed})
    return 0


def cmd_serve(args):
    from .studysvc.service import StudyServiceConfig, serve
    config = StudyServiceConfig.from_file(args.config)
    serve(config)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="facevoice",
        description="cross-modal face/voice co-embedding laboratory")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--ids", type=int, required=True)
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--shared", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=5.0)
    p.add_argument("--latent", type=int, default=16)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("split", help="identity-level train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the co-embedding heads")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value file with TrainConfig fields")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay-every", dest="lr_decay_every", type=int)
    p.add_argument("--hard-mining-start", dest="hard_mining_start", type=int)
    p.add_argument("--hard-mining-pool", dest="hard_mining_pool", type=int)
    p.add_argument("--hard-mining-keep", dest="hard_mining_keep", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--direction", choices=["V2F", "F2V"])
    p.add_argument("--objective",
                   choices=["triplet", "contrastive", "classifier"])
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--normalize", action="store_true",
                   help="L2-normalize feature vectors before the heads")

    p = sub.add_parser("eval-match", help="2-way forced matching accuracy")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grouping", default="none",
                   choices=["none", "G", "E", "GE", "GEFA"])
    p.add_argument("--gefa", help="gender,ethnicity,fluency,age_group "
                                  "('-' leaves a slot free)")
    p.add_argument("--direction", choices=["V2F", "F2V"], default="V2F")
    p.add_argument("--trials-per-probe", dest="trials_per_probe", type=int,
                   default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-recall", help="cross-modal recall@K")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--set-size", dest="set_size", type=int, default=50)
    p.add_argument("--ks", default="1,5,10")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--direction", choices=["V2F", "F2V"], default="V2F")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("probe", help="linear attribute probe on embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attribute", required=True)
    p.add_argument("--modality", choices=["face", "voice"], required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--split")
    p.add_argument("--side", choices=["train", "test"], default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-embeddings",
                       help="dump embeddings + annotations for projection")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split")
    p.add_argument("--side", choices=["train", "test"], default="test")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("stats", help="t tests / ANOVA / Tukey over groups")
    p.add_argument("--groups", required=True,
                   help="JSONL of {label, values} per line")
    p.add_argument("--mu0", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("serve", help="run the study-administration service")
    p.add_argument("--config", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "split":
            return cmd_split(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval-match":
            return cmd_eval_match(args, parser)
        if args.command == "eval-recall":
            return cmd_eval_recall(args)
        if args.command == "probe":
            return cmd_probe(args)
        if args.command == "export-embeddings":
            return cmd_export(args)
        if args.command == "stats":
            return cmd_stats(args)
        if args.command == "serve":
            return cmd_serve(args)
        parser.error(f"unknown command {args.command!r}")
    except BrokenPipeError:
        return 1
    except Exception as e:  # runtime failures exit 1 with a message
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
