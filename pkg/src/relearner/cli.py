"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 validation or tolerance failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import __version__
from .deviation import DeviationSpec, deviation_breakdown, select_spatial_deviation, select_temporal_deviation
from .errors import ReLearnerError
from .gmrf import GmrfParams, InjectionSpec, generate_synthetic, synthetic_graph, temporal_w
from .io import from_windows, graph_kernels, read_stds, write_stds
from .kernels import adaptive_tensor
from .metrics import EvalReport, build_report
from .model import ModelConfig, ReLearnerModel, config_hash
from .numerics import make_rng
from . import oracles
from .training import TrainConfig, split_and_window, split_windows, train

log = logging.getLogger("relearner")

CHECKPOINT_NAME = "model.ckpt"
HISTORY_NAME = "history.csv"


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _kebab(name):
    return "--" + name.replace("_", "-")


def _parse_bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _seq(cast):
    def parse(text):
        return tuple(cast(v) for v in str(text).split(",") if v.strip())

    return parse


# fields that come from the dataset rather than from the config
_DATA_FIELDS = {"nodes", "feats"}


def _field_type(f, default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, tuple):
        return _seq(float) if f.name == "split" else _seq(str)
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if f.name in ("d_node",):
        return int
    return str


def _add_config_flags(parser):
    seen = set()
    for cls in (TrainConfig, ModelConfig):
        proto = cls() if cls is TrainConfig else cls(nodes=1)
        for f in fields(cls):
            if f.name in _DATA_FIELDS or f.name in seen:
                continue
            seen.add(f.name)
            default = getattr(proto, f.name) if cls is TrainConfig else f.default
            parser.add_argument(_kebab(f.name), dest=f.name, type=_field_type(f, default), default=None)


def resolve_config(args):
    """Config file, then flags, then the SEED environment variable."""
    merged = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        for part in ("train", "model"):
            merged.update(raw.pop(part, {}) or {})
        merged.update(raw)
    for f in list(fields(TrainConfig)) + list(fields(ModelConfig)):
        v = getattr(args, f.name, None)
        if v is not None:
            merged[f.name] = v
    if os.environ.get("SEED"):
        merged["seed"] = int(os.environ["SEED"])
    return merged


def _windows(ds, cfg):
    if ds.window_length is not None:
        if ds.history != cfg.history or ds.window_length - ds.history != cfg.horizon:
            raise ValidationFailure(
                f"dataset windows are {ds.history}+{ds.window_length - ds.history}, config wants "
                f"{cfg.history}+{cfg.horizon}"
            )
        return split_windows(ds.windows(), cfg.split)
    return split_and_window(ds.frames.astype(np.float64), cfg)


def _write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "epoch", "train_loss", "val_mae"])
        for h in history:
            w.writerow([h["phase"], h["epoch"], repr(h["train_loss"]), repr(h["val_mae"])])


def cmd_synth(args):
    rng = make_rng(args.seed, 0)
    g, d = synthetic_graph(rng, args.nodes, args.epsilon)
    steps = args.history + args.horizon
    p = GmrfParams(temporal_w(steps), np.full(steps, args.theta), g, args.history)
    spec = InjectionSpec(args.divergent, args.convergent, args.temporal, args.window_fraction, args.delta, args.precursor_steps)
    syn = generate_synthetic(p, args.windows, spec, rng, feats=args.feats, level=args.level, distances=d)
    ds = from_windows(
        syn.x, syn.y, adjacency=g, annotations=syn.annotations,
        extra={"generator": "gmrf", "seed": args.seed, "node_std": syn.node_std.tolist()},
    )
    write_stds(args.out, ds)
    print(f"wrote {args.windows} windows of {args.nodes} nodes to {args.out}")
    return 0


def cmd_train(args):
    merged = resolve_config(args)
    ds = read_stds(args.data)
    tcfg = TrainConfig.from_dict(merged)
    mcfg = ModelConfig.from_dict({**merged, "nodes": ds.nodes, "feats": ds.frames.shape[2]})
    tr, va, _ = _windows(ds, tcfg)
    model = ReLearnerModel(mcfg, graph_kernels(ds.adjacency), seed=tcfg.seed)
    model, history = train(model, (tr, va), tcfg)
    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, CHECKPOINT_NAME), extra={"train": tcfg.to_dict()})
    _write_history(os.path.join(args.out, HISTORY_NAME), history)
    best = min((h["val_mae"] for h in history), default=float("nan"))
    print(f"trained {len(history)} epochs, best val MAE {best:.6f}; outputs in {args.out}")
    return 0


def _load_for_eval(args):
    model = ReLearnerModel.load(args.checkpoint)
    ds = read_stds(args.data)
    c = model.cfg
    if ds.nodes != c.nodes or ds.frames.shape[2] != c.feats:
        raise ValidationFailure(
            f"checkpoint expects {c.nodes} nodes x {c.feats} channels, dataset has "
            f"{ds.nodes} x {ds.frames.shape[2]}"
        )
    tcfg = TrainConfig.from_dict({**getattr(model, "extra", {}).get("train", {}), "history": c.history, "horizon": c.horizon})
    tr, va, te = _windows(ds, tcfg)
    ws = {"train": tr, "val": va, "test": te}[args.split]
    return model, ws, tcfg


def _meta(model, tcfg):
    cfg = model.cfg.to_dict()
    return {"config_hash": config_hash(cfg), "seed": tcfg.seed, "version": __version__, "variant": model.cfg.variant}


def cmd_eval(args):
    model, ws, tcfg = _load_for_eval(args)
    pred = model.predict(ws.x)
    report = build_report(pred, ws.y, args.mape_floor, args.threshold, _meta(model, tcfg))
    report.deviation = deviation_breakdown(ws.x, ws.y, pred, mape_floor=args.mape_floor)
    report.check()
    _emit_report(report, args)
    return 0


def cmd_deviation_report(args):
    model, ws, tcfg = _load_for_eval(args)
    pred = model.predict(ws.x)
    spec = DeviationSpec(input_top=args.input_top, label_bottom=args.label_bottom)
    report = EvalReport([], {}, None, deviation_breakdown(ws.x, ws.y, pred, spec, mape_floor=args.mape_floor), _meta(model, tcfg))
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out_json:
        with open(args.out_json, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def _emit_report(report, args):
    text = report.to_json()
    if args.out_json:
        with open(args.out_json, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text)
    if args.out_csv:
        with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["horizon", "metric", "value"])
            for h, m, v in report.horizon_rows():
                w.writerow([h, m, "" if v is None else repr(v)])


def cmd_oracle_check(args):
    results = [
        oracles.prop1_suite(args.seed, args.count, max_nodes=args.n),
        oracles.neumann_bound_suite(args.seed, args.count, max_nodes=args.n),
        oracles.prop2_suite(args.seed, args.count, max_nodes=max(2, args.n), partition=args.partition),
    ]
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 2


def cmd_kernel_dump(args):
    if args.kind == "adaptive":
        if not args.checkpoint:
            raise ValidationFailure("adaptive kernels live in a checkpoint; pass --checkpoint")
        model = ReLearnerModel.load(args.checkpoint)
        names = sorted(n for n in model.params if n.endswith(".E1"))
        if not names:
            raise ValidationFailure("checkpoint has no adaptive kernel")
        e1 = model.params[names[0]]
        e2 = model.params[names[0][:-1] + "2"]
        mat = adaptive_tensor(e1, e2, model.cfg.diag_mode).data
    else:
        if not args.data:
            raise ValidationFailure("static kernels come from a dataset graph; pass --data")
        ds = read_stds(args.data)
        kernels = graph_kernels(ds.adjacency)
        if not kernels:
            raise ValidationFailure("dataset has no adjacency")
        if args.kind == "predefined":
            mat = kernels["predefined"].matrix
        else:
            fwd, bwd = kernels["diffusion"]
            mat = (fwd if args.kind == "diffusion-forward" else bwd).matrix
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        for row in mat:
            w.writerow([repr(float(v)) for v in row])
    finally:
        if args.out:
            out.close()
    return 0


def _run_name(path):
    base = os.path.basename(os.path.normpath(path))
    if base in (HISTORY_NAME,) or base.endswith(".json"):
        parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
        return parent if base == HISTORY_NAME else os.path.splitext(base)[0]
    return os.path.splitext(base)[0]


def cmd_plot_data(args):
    rows = []
    for path in args.history or []:
        run = _run_name(path)
        with open(path, newline="", encoding="utf-8") as fh:
            for i, r in enumerate(csv.DictReader(fh), start=1):
                for metric in ("train_loss", "val_mae"):
                    rows.append([run, i, f"{r['phase']}_{metric}", r[metric]])
    for path in args.report or []:
        run = _run_name(path)
        with open(path, encoding="utf-8") as fh:
            report = EvalReport.from_json(fh.read())
        for h, m, v in report.horizon_rows():
            rows.append([run, h, m, "" if v is None else repr(v)])
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["run", "epoch_or_horizon", "metric", "value"])
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


def build_parser():
    parser = _Parser(prog="relearner", description="Residual-correction spatiotemporal forecasting toolkit.")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a deviation-injected GMRF dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--nodes", type=int, default=30)
    s.add_argument("--history", type=int, default=12)
    s.add_argument("--horizon", type=int, default=12)
    s.add_argument("--windows", type=int, default=2000)
    s.add_argument("--feats", type=int, default=1)
    s.add_argument("--seed", type=int, default=int(os.environ.get("SEED", 0)))
    s.add_argument("--epsilon", type=float, default=0.05)
    s.add_argument("--theta", type=float, default=1.0)
    s.add_argument("--divergent", type=float, default=0.0)
    s.add_argument("--convergent", type=float, default=0.0)
    s.add_argument("--temporal", type=float, default=0.2)
    s.add_argument("--window-fraction", type=float, default=1.0)
    s.add_argument("--delta", type=float, default=1.5)
    s.add_argument("--precursor-steps", type=int, default=3)
    s.add_argument("--level", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from a config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="JSON config file")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("deviation-report", cmd_deviation_report)):
        e = sub.add_parser(name, help=f"{name} a checkpoint on a dataset")
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--data", required=True)
        e.add_argument("--split", choices=("train", "val", "test"), default="test")
        e.add_argument("--mape-floor", type=float, default=1e-3)
        e.add_argument("--out-json")
        if name == "eval":
            e.add_argument("--threshold", type=float, default=None, help="exceedance threshold")
            e.add_argument("--out-csv")
        else:
            e.add_argument("--input-top", type=float, default=0.2)
            e.add_argument("--label-bottom", type=float, default=0.05)
        e.set_defaults(func=func)

    o = sub.add_parser("oracle-check", help="run the closed-form oracle suites")
    o.add_argument("--seed", type=int, default=int(os.environ.get("SEED", 0)))
    o.add_argument("--n", type=int, default=6, help="maximum node count")
    o.add_argument("--count", type=int, default=20, help="random instances per suite")
    o.add_argument("--partition", action="store_true", help="also check block partitions")
    o.set_defaults(func=cmd_oracle_check)

    k = sub.add_parser("kernel-dump", help="write a kernel as dense CSV")
    k.add_argument("--kind", choices=("predefined", "diffusion-forward", "diffusion-backward", "adaptive"), required=True)
    k.add_argument("--data")
    k.add_argument("--checkpoint")
    k.add_argument("--out")
    k.set_defaults(func=cmd_kernel_dump)

    p = sub.add_parser("plot-data", help="long-format CSV of loss curves and horizon metrics")
    p.add_argument("--history", nargs="*", help="history.csv files")
    p.add_argument("--report", nargs="*", help="eval report JSON files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ReLearnerError, ValidationFailure, ValueError, KeyError, OSError) as exc:
        sys.stderr.write(f"relearner {args.command}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
