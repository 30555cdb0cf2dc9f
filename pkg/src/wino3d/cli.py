"""``wino3d`` command line.

Exit status: 0 on success, 1 on usage or configuration errors, 2 when a
validation check against a reference path fails.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import plots
from .bench import STRATEGIES, bench_report, run_suite
from .core import Rng, save_tensor
from .errors import ValidationError, Wino3dError
from .lowrank import spectrum_csv, spectrum_report
from .model import MODES, CompactConv, SpatialConv, WinoConv, convert_model, finalize_model, tiny_c3d
from .modelio import load_model, save_model
from .pruning import Indicator, PruneConfig, kept_columns, prune_pipeline
from .trainer import TrainConfig, evaluate, synth_dataset, train
from .transform import F23, base_matrices, make_transform_set

log = logging.getLogger("wino3d")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return vals


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _sparsity(text: str) -> float:
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError("sparsity must be in [0, 1) so that at least one column is kept")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_data_args(p):
    g = p.add_argument_group("synthetic data")
    g.add_argument("--data-seed", type=_seed, default=0)
    g.add_argument("--n-train", type=int, default=256)
    g.add_argument("--n-eval", type=int, default=64)
    g.add_argument("--classes", type=int, default=4)


def _datasets(args, dtype=np.float32):
    tr = synth_dataset(args.data_seed, args.classes, args.n_train, dtype=dtype)
    ev = synth_dataset(args.data_seed + 10_000, args.classes, args.n_eval, dtype=dtype)
    return tr, ev


def _write_log(rows, path, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ";".join(str(x) for x in v)
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wino3d", description="Low-rank and column-sparse 3D Winograd convolution toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-matrices", help="write K, B, A, T_K, T_I, T_O as .lrt files")
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="train TinyC3D on synthetic data (fs, fw or lr mode)")
    t.add_argument("--mode", choices=MODES, default="fs")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--decay-every", type=int, default=15)
    t.add_argument("--seed", type=_seed, default=0)
    t.add_argument("--init", help="start from this .lrw model instead of a random spatial model")
    t.add_argument("--rank-plan", type=_int_list, default=[8])
    t.add_argument("--alpha", type=float, default=0.1)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="per-epoch CSV (epoch,split,loss,accuracy); a .png plot is written beside it")
    _add_data_args(t)

    c = sub.add_parser("convert", help="spatial model -> Winograd model via G T_K")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--mode", choices=("fw", "lr"), default="fw")
    c.add_argument("--rank-plan", type=_int_list, default=[8])
    c.add_argument("--alpha", type=float, default=0.1)

    pr = sub.add_parser("prune", help="location scoring then retraining with column masks")
    pr.add_argument("--in", dest="inp", required=True, help="fs model (converted to lr) or lr model")
    pr.add_argument("--out", required=True)
    pr.add_argument("--sparsity", type=_sparsity, required=True)
    pr.add_argument("--rank-plan", type=_int_list, default=[8])
    pr.add_argument("--alpha", type=float, default=0.1)
    pr.add_argument("--score-epochs", type=int, default=2)
    pr.add_argument("--retrain-epochs", type=int, default=10)
    pr.add_argument("--indicator", choices=[i.value for i in Indicator], default=Indicator.FULL_GRAD.value)
    pr.add_argument("--lr", type=float, default=1e-3)
    pr.add_argument("--decay-every", type=int, default=15)
    pr.add_argument("--seed", type=_seed, default=0)
    pr.add_argument("--log", help="per-epoch CSV (stage,epoch,split,loss,accuracy,l)")
    _add_data_args(pr)

    f = sub.add_parser("finalize", help="fold low-rank factors and masks into compact layers")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="accuracy of a model on the synthetic eval split")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--seed", type=_seed, default=0, help="unused; accepted for uniformity")
    _add_data_args(e)

    b = sub.add_parser("bench", help="im2col vs Winograd vs sparse Winograd latency")
    b.add_argument("--strategies", default=",".join(STRATEGIES))
    b.add_argument("--sparsities", type=_float_list, default=[0.0, 0.3, 0.5, 0.7, 0.9])
    b.add_argument("--shape", type=_int_list, default=[64, 64, 8, 28, 28], help="Ci,Co,D,H,W")
    b.add_argument("--reps", type=int, default=21)
    b.add_argument("--threads", type=int, default=None)
    b.add_argument("--seed", type=_seed, default=0)
    b.add_argument("--out", required=True)

    s = sub.add_parser("spectrum", help="singular-value spectrum of each Winograd layer")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    return p


def cmd_gen_matrices(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    bm = base_matrices(F23)
    ts = make_transform_set(F23)
    for name, mat in (("K", bm.K), ("B", bm.B), ("A", bm.A), ("T_K", ts.T_K), ("T_I", ts.T_I), ("T_O", ts.T_O)):
        save_tensor(np.ascontiguousarray(mat, dtype=np.float64), os.path.join(args.out, f"{name}.lrt"))
    print(f"wrote 6 matrices to {args.out}")
    return 0


def _rank_plan(plan, n):
    return plan * n if len(plan) == 1 else plan


def cmd_train(args) -> int:
    tr, ev = _datasets(args)
    if args.init:
        model = load_model(args.init)
    else:
        model = tiny_c3d(Rng(args.seed), num_classes=args.classes, dtype=np.float32)
    if args.mode != model.mode:
        model = convert_model(model, args.mode, args.rank_plan, args.alpha)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                      decay_every=args.decay_every, seed=args.seed)
    model, rows = train(model, tr, cfg, ev)
    save_model(model, args.out)
    acc = evaluate(model, ev)
    print(f"mode={model.mode} trainable={model.n_trainable()} eval_accuracy={acc:.4f}")
    if args.log:
        _write_log(rows, args.log, ["epoch", "split", "loss", "accuracy"])
        plots.plot_training(rows, plots.figure_path(args.log))
    return 0


def cmd_convert(args) -> int:
    model = load_model(args.inp)
    out = convert_model(model, args.mode, args.rank_plan, args.alpha)
    save_model(out, args.out)
    print(f"converted {len(out.winograd_layers())} layers to {args.mode}")
    return 0


def cmd_prune(args) -> int:
    tr, ev = _datasets(args)
    model = load_model(args.inp)
    if model.mode == "fs":
        model = convert_model(model, "lr", args.rank_plan, args.alpha)
    cfg = PruneConfig(sparsity=args.sparsity, score_epochs=args.score_epochs, retrain_epochs=args.retrain_epochs,
                      rank_plan=args.rank_plan, alpha=args.alpha, indicator=args.indicator, lr=args.lr,
                      decay_every=args.decay_every, seed=args.seed)
    res = prune_pipeline(model, tr, cfg, ev)
    save_model(res.model, args.out)
    print(f"sparsity={args.sparsity} l={cfg.l} eval_accuracy={evaluate(res.model, ev):.4f}")
    if args.log:
        _write_log(res.log, args.log, ["stage", "epoch", "split", "loss", "accuracy", "l"])
        plots.plot_training(res.log, plots.figure_path(args.log))
    return 0


def cmd_finalize(args) -> int:
    model = load_model(args.inp)
    out = finalize_model(model)
    save_model(out, args.out)
    ls = [L.cl.l for L in out.layers if isinstance(L, CompactConv)]
    print(f"compact layers kept columns: {ls}")
    return 0


def cmd_eval(args) -> int:
    _, ev = _datasets(args)
    model = load_model(args.inp)
    print(f"accuracy {evaluate(model, ev):.6f}")
    return 0


def cmd_bench(args) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise UsageError(f"unknown strategies {bad}; choose from {STRATEGIES}")
    if len(args.shape) != 5:
        raise UsageError("--shape needs five integers Ci,Co,D,H,W")
    for sp in args.sparsities:
        kept_columns(sp)
    rows = run_suite(tuple(args.shape), strategies, args.sparsities, args.reps, args.threads, args.seed)
    with open(args.out, "w") as fh:
        fh.write(bench_report(rows))
    plots.plot_bench(rows, plots.figure_path(args.out))
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _winograd_weights(model):
    ts = make_transform_set()
    out = {}
    for i, L in enumerate(model.layers):
        if isinstance(L, WinoConv):
            out[f"layer{i}"] = L.layer.effective_weight().astype(np.float64)
        elif isinstance(L, CompactConv):
            out[f"layer{i}"] = L.cl.scatter().astype(np.float64)
        elif isinstance(L, SpatialConv) and model.mode == "fs" and i > 0:
            k = L.kernel.astype(np.float64)
            out[f"layer{i}"] = k.reshape(k.shape[0] * k.shape[1], -1) @ ts.T_K
    return out


def cmd_spectrum(args) -> int:
    model = load_model(args.inp)
    weights = _winograd_weights(model)
    if not weights:
        raise UsageError("model has no Winograd-eligible layers")
    spectra = {name: spectrum_report(G) for name, G in weights.items()}
    with open(args.out, "w") as fh:
        fh.write(spectrum_csv(spectra))
    plots.plot_spectrum(spectra, plots.figure_path(args.out))
    print(f"wrote spectra of {len(spectra)} layers to {args.out}")
    return 0


COMMANDS = {
    "gen-matrices": cmd_gen_matrices,
    "train": cmd_train,
    "convert": cmd_convert,
    "prune": cmd_prune,
    "finalize": cmd_finalize,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "spectrum": cmd_spectrum,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"wino3d {args.command}: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"wino3d {args.command}: validation failed: {exc}", file=sys.stderr)
        return 2
    except (Wino3dError, OSError) as exc:
        print(f"wino3d {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
