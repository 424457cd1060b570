"""``primkit`` command-line entry point.

Subcommands::

    primkit synth    --out DIR [--config synth.json] [--seed N] [--key value ...]
    primkit cv       --config exp.json [--out DIR] [--seed N] [--train.max_epochs 5 ...]
    primkit train    --config exp.json --fold K [--model NAME]
    primkit evaluate --run DIR | --checkpoints CK [CK ...]  --manifest test.json --out DIR
    primkit predict  --checkpoint CK --manifest M.json --recording FILE [--patient ID] [--stride S] --out FILE
    primkit report   --run DIR

Configuration comes from a JSON file; any extra ``--dotted.key value``
flag overrides one entry of it (values are parsed as JSON when possible).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_manifest, load_patient_meta, load_recording, prepare_recording
from .errors import ConfigError, PrimkitError
from .experiment import (
    DataConfig,
    ExperimentConfig,
    _run_fold,
    evaluate_checkpoints,
    load_cohort,
    predict_rows,
    run_cv,
    write_predictions,
)
from .synth import SynthConfig, generate_dataset

log = logging.getLogger("primkit")


def parse_overrides(tokens) -> list:
    """``['--a.b', '3', '--c', 'x']`` -> ``[('a.b', 3), ('c', 'x')]``."""
    out, i = [], 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        elif i + 1 < len(tokens):
            raw = tokens[i + 1]
            i += 2
        else:
            raise ConfigError(f"override {tok} has no value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.append((key.replace("-", "_"), value))
    return out


def apply_overrides(config: dict, overrides) -> dict:
    for key, value in overrides:
        parts = key.split(".")
        node = config
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a config section")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r}: unknown key {parts[-1]!r}")
        node[parts[-1]] = value
    return config


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _experiment(args, extra) -> ExperimentConfig:
    base = ExperimentConfig().to_dict()
    if args.config:
        user = _read_json(args.config)
        unknown = set(user) - set(base)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        for section in ("train", "forest", "data"):
            if section in user:
                base[section].update(user.pop(section))
        base.update(user)
    apply_overrides(base, extra)
    if getattr(args, "out", None):
        base["out"] = args.out
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    return ExperimentConfig.from_dict(base)


def cmd_synth(args, extra) -> int:
    base = SynthConfig().to_dict()
    if args.config:
        user = _read_json(args.config)
        unknown = set(user) - set(base)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        base.update(user)
    apply_overrides(base, extra)
    if args.seed is not None:
        base["seed"] = args.seed
    cfg = SynthConfig.from_dict(base)
    summary = generate_dataset(cfg, args.out)
    n_train = len(summary["cohorts"]["train"]["patients"])
    n_test = len(summary["cohorts"]["test"]["patients"])
    print(f"wrote {n_train} train and {n_test} held-out patients to {args.out}")
    return 0


def cmd_cv(args, extra) -> int:
    cfg = _experiment(args, extra)
    result = run_cv(cfg)
    print(Path(cfg.out, "val_table.txt").read_text(), end="")
    for name, paths in result.checkpoints.items():
        log.info("%s: %d checkpoints", name, len(paths))
    return 0


def cmd_train(args, extra) -> int:
    cfg = _experiment(args, extra)
    cfg.check_paths("train_manifest")
    entries = [m for m in cfg.models if args.model is None or m["name"] == args.model]
    if not entries:
        raise ConfigError(f"no model named {args.model!r} in config")
    if not 0 <= args.fold < cfg.n_splits:
        raise ConfigError(f"fold {args.fold} outside 0..{cfg.n_splits - 1}")
    recs, metas = load_cohort(cfg.train_manifest, cfg.data)
    for entry in entries:
        res = _run_fold(cfg, entry, args.fold, recs, metas)
        path = Path(cfg.out) / entry["name"] / f"fold{args.fold}"
        save_checkpoint(res.model, path)
        print(f"{entry['name']} fold {args.fold}: validation {res.val_score:.4f} -> {path}")
    return 0


def _find_checkpoints(run_dir) -> list:
    found = sorted(str(p.parent) for p in Path(run_dir).glob("**/manifest.json")
                   if (p.parent / "params.bin").exists())
    if not found:
        raise ConfigError(f"no checkpoints under {run_dir}")
    return found


def cmd_evaluate(args, extra) -> int:
    data = DataConfig()
    if args.config:
        cfg = _experiment(args, extra)
        data = cfg.data
    elif extra:
        raise ConfigError("overrides need --config")
    paths = args.checkpoints or _find_checkpoints(args.run)
    result = evaluate_checkpoints(paths, args.manifest, data, args.out)
    print(result.report.to_text())
    return 0


def cmd_predict(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    man = load_manifest(args.manifest)
    metas = load_patient_meta(man.resolve(man.patients_path))
    rec_path = Path(args.recording)
    entry = next((e for e in man.entries if man.resolve(e.path).resolve() == rec_path.resolve()), None)
    pid = args.patient or (entry.patient_id if entry else None)
    if pid is None:
        raise ConfigError(f"{rec_path} is not in the manifest; pass --patient")
    if pid not in metas:
        raise ConfigError(f"patient {pid!r} has no metadata row")
    data = DataConfig(window_s=args.window_s, normalize=not args.no_normalize)
    rec = load_recording(rec_path, man.schema, pid)
    rec = prepare_recording(rec, metas[pid], data.normalize)
    rows = predict_rows(load_checkpoint(args.checkpoint), rec, data, args.stride)
    write_predictions(args.out, rows)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return 0


def cmd_report(args, extra) -> int:
    run = Path(args.run)
    parts = []
    for name, title in (("val_table.txt", "Validation accuracy per split"), ("metrics.txt", "Test metrics")):
        f = run / name
        if f.exists():
            parts.append(f"{title}\n{'-' * len(title)}\n{f.read_text(encoding='utf-8').rstrip()}\n")
    metrics = run / "metrics.json"
    if metrics.exists():
        m = json.loads(metrics.read_text())
        comp = m.get("composition", {})
        lines = ["Analysis", "--------"]
        if "member_balanced_accuracy" in m:
            lines.append("member balanced accuracy: " + ", ".join(f"{100 * v:.2f}" for v in
                                                                   m["member_balanced_accuracy"]))
        for k, v in comp.items():
            lines.append(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}")
        flags = m.get("letter_value_median_above_0.6", {})
        if flags:
            lines.append("median ground-truth probability >= 0.6: "
                         + ", ".join(f"{k}={'yes' if v else 'no'}" for k, v in flags.items()))
        parts.append("\n".join(lines) + "\n")
    if not parts:
        raise ConfigError(f"{run} holds no val_table.txt or metrics files")
    text = "\n".join(parts)
    (run / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="primkit", description="Functional-primitive classification toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="SynthConfig JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cv", help="cross-validated training of every model setting")
    p.add_argument("--config", help="experiment JSON")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("train", help="train a single fold")
    p.add_argument("--config", help="experiment JSON")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--model", help="model entry name (default: all)")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="ensemble checkpoints on a test manifest")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--run", help="directory searched for checkpoints")
    src.add_argument("--checkpoints", nargs="+")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="experiment JSON (for data settings)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-timestep probabilities for one recording")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="manifest providing the schema and patient metadata")
    p.add_argument("--recording", required=True)
    p.add_argument("--patient")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--window-s", type=float, default=2.0)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="collect tables of a run directory into report.txt")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, parse_overrides(extra))
    except (PrimkitError, OSError) as exc:
        print(f"primkit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
