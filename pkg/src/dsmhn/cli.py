"""Command-line pipeline: synth, train, encode, eval and gradcheck.

Exit status: 0 success, 1 usage or configuration error, 2 data or file
format error, 3 numeric failure (non-finite values or a failed gradcheck).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field

from . import data as data_mod
from .codes import load_codes, quantize, save_codes
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .fileio import atomic_write
from .gradcheck import VARIANTS, TinyDims, run_gradcheck
from .model import (
    HIDDEN_WIDTH,
    checkpoint_dims,
    config_from_dims,
    default_configs,
    encode_relaxed,
    load_checkpoint,
    save_checkpoint,
)
from .objective import LOSS_KINDS, PairwiseLoss
from .retrieval import RetrievalTask, evaluate
from .trainer import PRESETS, log_records, preset, train

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_SYNTH_KEYS = {f.name for f in dataclasses.fields(data_mod.SynthSpec)} - {"seed"}
_SPLIT_KEYS = {f.name for f in dataclasses.fields(data_mod.SplitSpec)} - {"seed"}
_NETWORK_KEYS = {"code_length", "hidden"}
_TRAIN_KEYS = {"loss", "margin", "alpha", "beta", "gamma", "learning_rate",
               "batch_size", "iterations", "positive_fraction"}
_EVAL_KEYS = {"task", "ks", "dump_rankings"}
_TOP_KEYS = {"schema_version", "seed", "preset", "synth", "split", "network", "train", "eval"}


def _reject_unknown(section: str, given: dict, allowed: set):
    if not isinstance(given, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}; "
                          f"allowed: {', '.join(sorted(allowed))}")


@dataclass
class RunConfig:
    """Everything one pipeline run needs. Defaults give the desk preset on
    the reference synthetic benchmark with 16-bit codes."""

    seed: int = 0
    preset: str = "desk"
    synth: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        _reject_unknown("top level", raw, _TOP_KEYS)
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")
        for name, keys in (("synth", _SYNTH_KEYS), ("split", _SPLIT_KEYS),
                           ("network", _NETWORK_KEYS), ("train", _TRAIN_KEYS),
                           ("eval", _EVAL_KEYS)):
            _reject_unknown(name, raw.get(name, {}), keys)
        cfg = cls(
            seed=raw.get("seed", 0),
            preset=raw.get("preset", "desk"),
            synth=dict(raw.get("synth", {})),
            split=dict(raw.get("split", {})),
            network=dict(raw.get("network", {})),
            train=dict(raw.get("train", {})),
            eval=dict(raw.get("eval", {})),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_dict(raw)

    def validate(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}")
        # building the specs runs their own validation
        self.synth_spec()
        self.split_spec()
        self.train_config()
        self.task()
        self.ks()

    def synth_spec(self) -> data_mod.SynthSpec:
        return data_mod.SynthSpec(**self.synth, seed=self.seed)

    def split_spec(self) -> data_mod.SplitSpec:
        return data_mod.SplitSpec(**self.split, seed=self.seed)

    @property
    def code_length(self) -> int:
        value = self.network.get("code_length", 16)
        if not isinstance(value, int) or value < 1:
            raise ConfigError("code_length must be a positive integer")
        return value

    @property
    def hidden(self) -> int:
        value = self.network.get("hidden", HIDDEN_WIDTH)
        if not isinstance(value, int) or value < 1:
            raise ConfigError("hidden must be a positive integer")
        return value

    def train_config(self):
        values = dict(self.train)
        kind = values.pop("loss", "contrastive")
        margin = values.pop("margin", None)
        return preset(self.preset, loss=PairwiseLoss(kind, margin), seed=self.seed, **values)

    def task(self) -> RetrievalTask:
        try:
            return RetrievalTask(self.eval.get("task", "ixt"))
        except ValueError:
            raise ConfigError(f"unknown task {self.eval.get('task')!r}; expected ixt, txi or ixi") from None

    def ks(self) -> list[int]:
        ks = self.eval.get("ks", [100])
        if not ks or not all(isinstance(k, int) and k >= 1 for k in ks):
            raise ConfigError("ks must be a non-empty list of positive integers")
        return list(ks)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "seed": self.seed, "preset": self.preset,
                "synth": self.synth, "split": self.split, "network": self.network,
                "train": self.train, "eval": self.eval}


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K[,K...], got {text!r}") from None
    if any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("every K must be >= 1")
    return ks


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "preset", None) is not None:
        cfg.preset = args.preset
    if getattr(args, "bits", None) is not None:
        cfg.network["code_length"] = args.bits
    if getattr(args, "loss", None) is not None:
        cfg.train["loss"] = args.loss
    if getattr(args, "task", None) is not None:
        cfg.eval["task"] = args.task
    if getattr(args, "k", None) is not None:
        cfg.eval["ks"] = args.k
    if getattr(args, "dump_rankings", False):
        cfg.eval["dump_rankings"] = True
    cfg.validate()
    return cfg


def load_dataset(path) -> data_mod.MultimodalDataset:
    """DSMD binary, or the CSV fixture format when the name ends in .csv."""
    if str(path).lower().endswith(".csv"):
        return data_mod.load_csv(path)
    return data_mod.load(path)


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    ds = data_mod.generate_synthetic(cfg.synth_spec())
    data_mod.save(ds, args.out)
    print(f"wrote {args.out}: n={ds.n} d_x={ds.d_x} d_y={ds.d_y} C={ds.num_classes}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    ds = load_dataset(args.dataset)
    parts = data_mod.split(ds, cfg.split_spec())
    tc = cfg.train_config()
    cx, cy = default_configs(ds.d_x, ds.d_y, cfg.code_length, ds.num_classes, hidden=cfg.hidden)
    px, py, tlog = train(parts.database, (cx, cy), tc, train_indices=parts.train_indices)

    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(px, os.path.join(args.out, "x.dsmp"))
    save_checkpoint(py, os.path.join(args.out, "y.dsmp"))
    data_mod.save(parts.query, os.path.join(args.out, "query.dsmd"))
    data_mod.save(parts.database, os.path.join(args.out, "database.dsmd"))
    extra = {"code_length": cfg.code_length, "hidden": cfg.hidden, "dataset": str(args.dataset)}
    lines = log_records(tc, tlog, cfg.preset, extra)
    atomic_write(os.path.join(args.out, "train_log.jsonl"), ("\n".join(lines) + "\n").encode())
    print(f"trained {tc.iterations} iterations in {tlog.wall_time:.1f}s; "
          f"final objective {tlog.reports[-1].total:.6g}")
    return EXIT_OK


def cmd_encode(args) -> int:
    params = load_checkpoint(args.checkpoint)
    config = config_from_dims(checkpoint_dims(params))
    ds = load_dataset(args.dataset)
    features = ds.x_features if args.modality == "x" else ds.y_features
    if features.shape[1] != config.in_dim:
        raise ShapeError(f"checkpoint expects {config.in_dim}-dim features, "
                         f"modality {args.modality} of {args.dataset} has {features.shape[1]}")
    codes = quantize(encode_relaxed(params, config, features))
    save_codes(codes, args.out)
    print(f"wrote {args.out}: L={codes.code_length} n={codes.n}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    queries = load_codes(args.query_codes)
    database = load_codes(args.db_codes)
    q_labels = load_dataset(args.query_labels).labels
    db_labels = load_dataset(args.db_labels).labels
    report = evaluate(queries, q_labels, database, db_labels, ks=cfg.ks(), task=cfg.task(),
                      keep_rankings=bool(cfg.eval.get("dump_rankings", False)))
    if args.out:
        report.write(args.out)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    dims = TinyDims()
    kinds = LOSS_KINDS if args.all_losses else (args.loss or "contrastive",)
    variant = "corrupt" if args.corrupt else args.variant
    seed = 0 if args.seed is None else args.seed
    ok = True
    for kind in kinds:
        if variant == "printed_l1" and kind != "l1":
            continue
        result = run_gradcheck(kind, seed=seed, dims=dims, variant=variant)
        print(result.line())
        if args.verbose:
            for check in result.checks:
                print(f"  {check.name} rel_err={check.rel_error:.3e}")
        ok &= result.passed
    return EXIT_OK if ok else EXIT_NUMERIC


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dsmhn", description="Multimodal hashing toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *, train_flags=False, eval_flags=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if train_flags:
            p.add_argument("--preset", choices=sorted(PRESETS))
            p.add_argument("--bits", type=int, help="code length L")
            p.add_argument("--loss", choices=LOSS_KINDS)
        if eval_flags:
            p.add_argument("--task", choices=[t.value for t in RetrievalTask])
            p.add_argument("--k", type=_parse_ks, help="comma-separated cut-offs for P@K")
            p.add_argument("--dump-rankings", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output DSMD file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train both modality networks")
    p.add_argument("dataset")
    common(p, train_flags=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="binary codes for one modality of a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--modality", choices=("x", "y"), required=True)
    p.add_argument("--out", required=True, help="output code file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="Hamming ranking metrics")
    p.add_argument("query_codes")
    p.add_argument("query_labels", help="dataset file supplying query labels")
    p.add_argument("db_codes")
    p.add_argument("db_labels", help="dataset file supplying database labels")
    common(p, eval_flags=True)
    p.add_argument("--out", help="directory for report.txt and CSV files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient oracle")
    p.add_argument("--loss", choices=LOSS_KINDS)
    p.add_argument("--all-losses", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS, default="exact")
    p.add_argument("--corrupt", action="store_true", help="harness self-test; must FAIL")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _thread_limit():
    raw = os.environ.get("DSMHN_THREADS", "0")
    try:
        limit = int(raw)
    except ValueError:
        raise ConfigError(f"DSMHN_THREADS must be an integer, got {raw!r}") from None
    if limit < 0:
        raise ConfigError("DSMHN_THREADS must be >= 0")
    return limit or None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        limit = _thread_limit()
        if limit is None:
            return args.func(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=limit):
            return args.func(args)
    except ConfigError as exc:
        print(f"dsmhn: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"dsmhn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ShapeError, ValueError) as exc:
        print(f"dsmhn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"dsmhn: cannot access {name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
