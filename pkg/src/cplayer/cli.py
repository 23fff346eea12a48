"""Command-line entry point: ``cplayer <command> ...``.

Exit status is 0 on success, 1 for invalid arguments or input data and 2 for
I/O failures. Diagnostics and the effective seed go to stderr; stdout only
carries data (JSON explanations and metrics).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from . import bench, cpl, pcio
from .estimators import resolve_k

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _say_seed(seed) -> None:
    print(f"seed: {seed}", file=sys.stderr)


def cmd_sample(args) -> int:
    _say_seed(args.seed)
    mesh = pcio.read_off(args.inp)
    cloud = pcio.normalize_unit_sphere(pcio.sample_surface(mesh, args.n, args.seed))
    pcio.write_xyz(cloud, args.out)
    return EXIT_OK


def _selection_features(points: np.ndarray, ckpt_path) -> np.ndarray:
    if ckpt_path is None:
        return points.astype(np.float64)
    from .cpnet.checkpoint import checkpoint_load
    model = checkpoint_load(ckpt_path).build_model()
    return model.stage0_features(points[None]).data[0].astype(np.float64)


def cmd_downsample(args) -> int:
    _say_seed(args.seed)
    cloud = pcio.read_xyz(args.inp)
    n = len(cloud)
    k = resolve_k(n, args.ratio)
    if args.mode in cpl.MODES:
        sel = cpl.cpl_select(_selection_features(cloud.points, args.features_from), k, args.mode)
        idx = sel.resized
        explanation = sel.to_dict()
    elif args.mode == "random":
        idx = cpl.downsample_random(n, k, args.seed)
        explanation = {"mode": "RANDOM", "resized": idx.tolist()}
    else:
        idx = cpl.downsample_fps(cloud.points, k)
        explanation = {"mode": "FPS", "resized": idx.tolist()}
    out = pcio.PointCloud(cloud.points[idx], None if cloud.colors is None else cloud.colors[idx])
    pcio.write_xyz(out, args.out)
    if args.ply:
        pcio.write_ply_depth_colored(out, args.ply)
    if args.explain:
        json.dump(explanation, sys.stdout)
        sys.stdout.write("\n")
    return EXIT_OK


def cmd_train(args) -> int:
    from .cpnet.checkpoint import Checkpoint, checkpoint_save
    from .cpnet.config import load_config
    from .cpnet.data import dataset_for, load_split
    from .cpnet.model import CPNet
    from .cpnet.training import EpochMetrics, train, write_metrics_csv

    net, tr = load_config(args.config)
    if args.seed is not None:
        net, tr = dataclasses.replace(net, seed=args.seed), dataclasses.replace(tr, seed=args.seed)
    if args.epochs is not None:
        tr = dataclasses.replace(tr, epochs=args.epochs)
    _say_seed(tr.seed)
    dataset = dataset_for(net, tr)
    X, y = load_split(dataset, "train")
    Xt, yt = load_split(dataset, "test")
    model = CPNet(net)
    history: list[EpochMetrics] = []

    def on_epoch(m: EpochMetrics):
        history.append(m)
        if args.log:
            write_metrics_csv(history, args.log)

    result = train(model, X, y, tr, Xt, yt, on_epoch=on_epoch)
    if args.log:
        write_metrics_csv(result.history, args.log)
    checkpoint_save(Checkpoint.from_model(model, tr, result.epochs_done, result.optimizer), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .cpnet.checkpoint import checkpoint_load
    from .cpnet.data import dataset_for, load_split
    from .cpnet.training import confusion_matrix, metrics_from_confusion, predict_logits
    from .cpnet.config import TrainConfig

    ckpt = checkpoint_load(args.ckpt)
    tr = ckpt.train or TrainConfig()
    if args.dataset_seed is not None:
        tr = dataclasses.replace(tr, dataset_seed=args.dataset_seed)
    _say_seed(args.seed)
    model = ckpt.build_model()
    X, y = load_split(dataset_for(ckpt.network, tr), args.split)
    logits = predict_logits(model, X, sampler_seed=args.seed)
    ev = metrics_from_confusion(confusion_matrix(y, logits.argmax(1), ckpt.network.num_classes))
    json.dump({"split": args.split, "dataset_seed": tr.dataset_seed, "overall_acc": ev.overall_acc,
               "mean_class_acc": ev.mean_class_acc, "confusion": ev.confusion.tolist()}, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .cpnet.ablate import load_grid, run_ablation, write_report

    grid = load_grid(args.grid)
    _say_seed(",".join(map(str, grid.seeds)))
    write_report(run_ablation(grid), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    _say_seed(args.seed)
    ds = args.d if args.d else [3]
    rows = bench.run_bench(args.op, args.n, ds, args.repeats, args.k, args.seed)
    bench.write_bench_csv(rows, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cplayer", description="Critical points down-sampling and CP-Net tools.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="sample a point cloud from an OFF mesh")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--n", type=int, default=1024)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("downsample", help="down-sample an XYZ cloud")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--ratio", required=True)
    s.add_argument("--mode", choices=("cpl", "wcpl", "random", "fps"), default="cpl")
    s.add_argument("--features-from", metavar="CKPT",
                   help="select on first-stage features of a trained checkpoint")
    s.add_argument("--explain", action="store_true", help="print the selection as JSON on stdout")
    s.add_argument("--out", required=True)
    s.add_argument("--ply", help="also write a depth-coloured PLY")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_downsample)

    s = sub.add_parser("train", help="train CP-Net on the synthetic shape set")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="per-epoch metrics CSV")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--epochs", type=int, help="override the config epoch count")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--dataset-seed", type=int)
    s.add_argument("--split", choices=("train", "test"), default="test")
    s.add_argument("--seed", type=int, default=0, help="sampler seed for random down-sampling")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run a training grid and write a CSV report")
    s.add_argument("--grid", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("bench", help="time down-samplers and k-NN")
    s.add_argument("--op", type=lambda t: t.split(","), required=True,
                   help=f"comma-separated ops from {','.join(bench.OPS)}")
    s.add_argument("--n", type=_int_list, required=True)
    s.add_argument("--d", type=_int_list)
    s.add_argument("--k", type=int, help="output size; default n/4 (10 neighbours for knn)")
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "bench":
        bad = [op for op in args.op if op not in bench.OPS]
        if bad:
            parser.error(f"unknown bench op(s) {bad}; choose from {bench.OPS}")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"cplayer: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, IndexError) as exc:
        print(f"cplayer: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
