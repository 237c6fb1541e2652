"""Command-line entry point: ``glitter <subcommand> [flags]``.

Errors are reported as a single ``ERROR <code>: <message>`` line on stderr.
Exit status: 0 ok, 1 data/validation/training failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__
from .augment import AugmentConfig, build_pool, default_lexicon, load_lexicon
from .config import apply_overrides, load_config, train_config
from .data import load_dataset, load_pool, save_pool
from .errors import ConfigError, GlitterError
from .filtering import FilterConfig, apply_filter, write_retention_report
from .model import freeze, load_checkpoint, save_checkpoint
from .synth import PRESETS, synth

log = logging.getLogger("glitter")


def _out_dir(args) -> Path:
    if not args.out:
        raise ConfigError("--out <dir> is required for this subcommand")
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _points(text: str) -> tuple:
    pts = []
    for item in text.split(","):
        if item.strip():
            K, k1 = item.split(":")
            pts.append((int(K), int(k1)))
    return tuple(pts)


def _resolve(args) -> dict:
    """Config file + --set overrides + data/seed flags."""
    sets = list(args.set or [])
    for key in ("train", "dev", "pool", "pool_k", "teacher"):
        val = getattr(args, key, None)
        if val is not None:
            sets.append(f"data.{key}={json.dumps(val)}")
    if args.seed is not None:
        sets.append(f"training.seed={args.seed}")
    return apply_overrides(load_config(args.config), sets)


def _load_data(doc: dict, need_pool: bool):
    data = doc["data"]
    if not data.get("train"):
        raise ConfigError("no training data: pass --train or set data.train")
    ds = load_dataset(data["train"], split="train")
    dev = load_dataset(data["dev"], split="dev") if data.get("dev") else None
    pool = None
    if data.get("pool"):
        pool = load_pool(data["pool"], ds, data.get("pool_k"), relaxed=True)
    elif need_pool:
        raise ConfigError("this regime needs an augmentation pool: pass --pool or set data.pool")
    return ds, dev, pool


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = _out_dir(args)
    kwargs = {}
    for flag, key in (("n_train", "n_train"), ("n_dev", "n_dev"), ("K", "K")):
        if getattr(args, flag) is not None:
            kwargs[key] = getattr(args, flag)
    if args.preset == "noisy-aug":
        if args.corrupt_fraction is not None:
            kwargs["corrupt_fraction"] = args.corrupt_fraction
    elif args.corrupt_fraction is not None:
        raise ConfigError("--corrupt-fraction only applies to the noisy-aug preset")
    if args.dim is not None:
        if args.preset == "text-toy":
            raise ConfigError("--dim does not apply to text-toy")
        kwargs["dim"] = args.dim
    res = synth(args.preset, args.seed or 0, out, **kwargs)
    print(json.dumps({"train": len(res.train), "dev": len(res.dev), "pool_entries": res.pool.total(),
                      "out": str(out)}))
    return 0


def cmd_augment(args) -> int:
    out = _out_dir(args)
    ds = load_dataset(args.data)
    cfg = AugmentConfig(args.method, args.K, args.synonym_rate, args.deletion_rate_max, args.noise_scale,
                        args.seed or 0)
    lex = None
    if args.method == "eda":
        lex = load_lexicon(args.lexicon) if args.lexicon else default_lexicon()
    pool = build_pool(ds, cfg, lex)
    save_pool(pool, out / "pool.jsonl", ds.ids)
    print(json.dumps({"examples": len(ds), "K": pool.K, "entries": pool.total()}))
    return 0


def cmd_validate(args) -> int:
    ds = load_dataset(args.data)
    report = {"examples": len(ds), "num_classes": ds.num_classes, "modality": ds.modality}
    if args.pool:
        pool = load_pool(args.pool, ds, args.K, relaxed=args.relaxed)
        report.update(K=pool.K, entries=pool.total(), ragged=pool.ragged)
    print(json.dumps(report))
    return 0


def cmd_train(args) -> int:
    from .training import cache_teacher_logits, train, train_self_kd, write_history_csv

    doc = _resolve(args)
    cfg = train_config(doc)
    out = _out_dir(args)
    ds, dev, pool = _load_data(doc, need_pool=cfg.regime != "vanilla")
    with open(out / "config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)
    if cfg.regime == "self_kd":
        res = train_self_kd(ds, pool, cfg, dev)
        save_checkpoint(res.teacher.params, out / "teacher.json")
        write_history_csv(res.teacher_run.history, out / "teacher_metrics.csv")
        result = res.student
    else:
        teacher = None
        if cfg.regime == "kd":
            if not doc["data"].get("teacher"):
                raise ConfigError("regime kd needs a teacher checkpoint: pass --teacher or set data.teacher")
            teacher = freeze(load_checkpoint(doc["data"]["teacher"]))
            teacher = teacher.with_cache(cache_teacher_logits(teacher, ds, pool))
        result = train(ds, pool, teacher, cfg, dev)
    save_checkpoint(result.model, out / "model.json")
    write_history_csv(result.history, out / "metrics.csv")
    last = result.history[-1]
    dev_acc = None if last.dev_accuracy != last.dev_accuracy else last.dev_accuracy
    print(json.dumps({"epochs": last.epoch, "steps": last.step, "train_loss": last.train_loss,
                      "dev_accuracy": dev_acc, "out": str(out)}))
    return 0


def cmd_eval(args) -> int:
    from .training import evaluate

    m = load_checkpoint(args.model)
    ds = load_dataset(args.data)
    met = evaluate(m, ds)
    doc = {"data": str(args.data), "n": met.n, "accuracy": met.accuracy, "macro_f1": met.macro_f1}
    if args.out:
        with open(_out_dir(args) / "eval.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    print(json.dumps(doc))
    return 0


def cmd_filter(args) -> int:
    out = _out_dir(args)
    m = load_checkpoint(args.model)
    ds = load_dataset(args.data)
    pool = load_pool(args.pool, ds, args.K, relaxed=True)
    fcfg = FilterConfig(args.kind, args.beta)
    kept = apply_filter(fcfg, pool, m, ds)
    save_pool(kept, out / "pool.jsonl", ds.ids)
    write_retention_report(pool, kept, ds, out / "retention.csv")
    print(json.dumps({"before": pool.total(), "kept": kept.total()}))
    return 0


def cmd_bench(args) -> int:
    from .bench import SweepSpec, emit_report, run_sweep

    doc = _resolve(args)
    base = train_config(doc)
    out = _out_dir(args)
    ds, dev, pool = _load_data(doc, need_pool=True)
    seeds = _int_list(args.seeds) if args.seeds else (base.seed,)
    spec = SweepSpec(_int_list(args.sizes), _points(args.glitter), seeds, replace(base, regime="glitter"))
    report = run_sweep(ds, pool, spec, dev, history_dir=out / "history", parallel=args.parallel)
    emit_report(report, out / "sweep.csv")
    failed = sum(1 for r in report.rows if r.error)
    print(json.dumps({"rows": len(report.rows), "failed": failed, "out": str(out / "sweep.csv")}))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="glitter", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset + pool")
    s.add_argument("--preset", required=True, choices=PRESETS)
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-dev", type=int)
    s.add_argument("--K", type=int)
    s.add_argument("--corrupt-fraction", type=float)
    s.add_argument("--dim", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("augment", parents=[common], help="build an augmentation pool")
    s.add_argument("--data", required=True)
    s.add_argument("--method", choices=("eda", "perturb"), default="eda")
    s.add_argument("--K", type=int, default=8)
    s.add_argument("--synonym-rate", type=float, default=0.05)
    s.add_argument("--deletion-rate-max", type=float, default=0.10)
    s.add_argument("--noise-scale", type=float, default=0.1)
    s.add_argument("--lexicon", help="word<TAB>syn1,syn2 file (default: bundled)")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("validate", parents=[common], help="check a dataset and optional pool")
    s.add_argument("--data", required=True)
    s.add_argument("--pool")
    s.add_argument("--K", type=int)
    s.add_argument("--relaxed", action="store_true", help="allow ragged (filtered) pools")
    s.set_defaults(func=cmd_validate)

    for name, func, helptext in (("train", cmd_train, "train one regime"),
                                 ("bench", cmd_bench, "runtime sweep over pool sizes")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--train")
        s.add_argument("--dev")
        s.add_argument("--pool")
        s.add_argument("--K", dest="pool_k", type=int)
        if name == "train":
            s.add_argument("--teacher", help="teacher checkpoint (regime kd)")
        else:
            s.add_argument("--sizes", default="1,2,4,6,8")
            s.add_argument("--glitter", default="8:1,8:2", help="K:k1 points")
            s.add_argument("--seeds")
            s.add_argument("--parallel", type=int, default=0)
        s.set_defaults(func=func)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on any labelled JSONL")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("filter", parents=[common], help="confidence / label-preserving pool filter")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--pool", required=True)
    s.add_argument("--K", type=int)
    s.add_argument("--kind", choices=("confidence", "label_preserving"), required=True)
    s.add_argument("--beta", type=float)
    s.set_defaults(func=cmd_filter)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"ERROR {err.code}: {err}", file=sys.stderr)
        return 2
    except GlitterError as err:
        print(f"ERROR {err.code}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"ERROR io: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
