#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Command-line front end for the graspmap toolkit, which detects parallel-jaw
grasps in depth images with a fully convolutional network that predicts a grasp
(quality, angle, gripper width) for every pixel.

Sub-commands:

  synth     write a synthetic dataset (bars on a table, known grasps)
  convert   turn a Cornell grasp dataset directory into the portable layout
  train     train a network, cross-validating first if --folds > 1
  evaluate  score a trained network with the rectangle metric
  sweep     rescore at several Jaccard thresholds, or several grasp counts
  predict   draw the best grasps for one depth image or a directory of them

Exit codes: 0 success, 1 usage error, 2 input/output or file-format problem,
3 numerical failure during training. Set GRASPMAP_THREADS to cap the number of
worker threads used by convert and predict.

This program is part of the graspmap toolkit. It is released under the GPL,
either version 3 or (at your option) any later version. See the file LICENSE
for a copy of this license.
"""
module_docstring = __doc__


import argparse
import concurrent.futures
import dataclasses
import json
import os
import shutil
import sys
import threading
import typing

from pathlib import Path

import numpy as np

from mod import console
from mod import dataset as ds
from mod import errors
from mod import grasp_core as gc
from mod import model
from mod import render
from mod import tensor_engine as te
from mod import train_eval as tr


EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3

depth_suffixes = ('.png',)
point_cloud_suffixes = ('.txt', '.pcd')


class ArgumentParser(argparse.ArgumentParser):
    """argparse, but usage errors leave with status 1 instead of 2 (2 means a file
    problem here).
    """
    def error(self, message: str) -> typing.NoReturn:
        self.print_usage(sys.stderr)
        console.safe_print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def worker_threads() -> int:
    """Worker-thread cap from GRASPMAP_THREADS, or the CPU count."""
    raw = os.environ.get('GRASPMAP_THREADS', '').strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise errors.ParameterRangeError('GRASPMAP_THREADS', raw, "a positive integer")
    if n < 1:
        raise errors.ParameterRangeError('GRASPMAP_THREADS', n, ">= 1")
    return n


def float_list(text: str) -> typing.List[float]:
    try:
        return [float(t) for t in text.split(',') if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def int_list(text: str) -> typing.List[int]:
    try:
        return [int(t) for t in text.split(',') if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def echo_config(command: str,
                resolved: typing.Dict[str, typing.Any]) -> None:
    console.safe_print(json.dumps({'command': command, **resolved}, indent=2, sort_keys=True, default=str))


# synth
def cmd_synth(args: argparse.Namespace) -> int:
    echo_config('synth', {'count': args.count, 'size': args.size, 'seed': args.seed, 'bars': args.bars,
                          'images_per_object': args.images_per_object, 'out_dir': args.out_dir})
    samples = ds.make_synthetic(args.count, args.size, args.seed, args.bars, args.images_per_object)
    manifest = ds.write_dataset(samples, args.out_dir)
    console.safe_print(f"wrote {len(samples)} synthetic samples; manifest at {manifest}")
    return EXIT_OK


# convert
def _convert_one(number: str,
                 pcd: Path,
                 cpos: Path,
                 object_id: str,
                 out_dir: Path) -> typing.Dict[str, str]:
    if not cpos.exists():
        raise FileNotFoundError(f"no positive-rectangle file {cpos.name}")
    s = ds.load_cornell_sample(pcd, cpos, f"pcd{number}", object_id)
    depth_name, rects_name = f"pcd{number}_depth.png", f"pcd{number}cpos.txt"
    ds.write_depth_png(s.depth, out_dir / depth_name)
    shutil.copyfile(cpos, out_dir / rects_name)
    return {'id': s.id, 'object_id': object_id, 'depth_path': depth_name, 'rects_path': rects_name}


def cmd_convert(args: argparse.Namespace) -> int:
    threads = worker_threads()
    echo_config('convert', {'cornell_dir': args.cornell_dir, 'out_dir': args.out_dir, 'threads': threads})
    cornell = Path(args.cornell_dir)
    if not cornell.is_dir():
        raise errors.FormatError("Cornell dataset directory does not exist", str(cornell))
    out_dir = console.validate_directory(Path(args.out_dir), 'converted dataset')
    objects = ds.cornell_object_ids(cornell)
    files = ds.find_cornell_files(cornell)
    entries, failures = dict(), dict()
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(_convert_one, number, pcd, cpos, objects.get(number, ds.cornell_prefix_object_id(number)), out_dir): number
                   for number, pcd, cpos in files}
        for fut in concurrent.futures.as_completed(futures):
            number = futures[fut]
            try:
                entries[number] = fut.result()
                console.debug_print(f"converted pcd{number}", 3)
            except (errors.GraspMapError, OSError) as errr:
                failures[number] = str(errr)
                console.document_problem('convert_failure', {'image': number, 'error': str(errr)}, args.logs_dir, also_print=False)
    ds.write_manifest([entries[k] for k in sorted(entries)], out_dir / ds.manifest_name)
    console.safe_print(f"converted {len(entries)} of {len(files)} images into {out_dir}")
    if failures:
        console.safe_print(f"{len(failures)} image(s) failed:")
        for number in sorted(failures):
            console.safe_print(f"  pcd{number}: {failures[number]}")
        return EXIT_IO
    return EXIT_OK


# train / evaluate / sweep
def _train_config(args: argparse.Namespace) -> tr.TrainConfig:
    return tr.TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, folds=args.folds, split=args.split,
                          seed=args.seed, jaccard_threshold=args.jaccard, augment=not args.no_augment,
                          freeze_augmentation=args.freeze_augmentation, logs_directory=args.logs_dir)


def _require(parser: argparse.ArgumentParser,
             value: typing.Optional[str],
             flag: str) -> None:
    if not value:
        parser.error(f"{flag} must name a file")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    model_cfg = model.presets[args.preset]
    echo_config('train', {'data': args.data, 'preset': model_cfg.to_dict(), 'train': cfg.to_dict(),
                          'out_model': args.out_model, 'report': args.report, 'loss_history': args.loss_history})
    samples = ds.load_dataset(args.data)
    if not samples:
        raise errors.FormatError("dataset holds no samples", args.data)
    checksum = tr.config_checksum(cfg, model_cfg)

    cv_report = None
    if cfg.folds > 1:
        cv_report = tr.cross_validate(samples, cfg, model_cfg)
        for i, acc in enumerate(cv_report.per_fold):
            console.safe_print(f"fold {i}: accuracy {acc:.4f}")
        console.safe_print(f"cross-validated accuracy ({cfg.split}-wise, {cfg.folds} folds): {cv_report.accuracy:.4f}")

    net = model.build(model_cfg, cfg.seed)
    net, history = tr.train(net, samples, cfg)
    model.save_file(net, args.out_model)
    if args.loss_history:
        tr.write_loss_history(history, args.loss_history)
    if history:
        console.safe_print(f"final mean loss {history[-1]:.6f} after {len(history)} epochs (first epoch {history[0]:.6f})")

    if args.report:
        report = cv_report if cv_report is not None else tr.evaluate(net, samples, cfg.jaccard_threshold)
        records = tr.report_records(report, cfg.split, cfg.seed, checksum, timing=not args.no_timing)
        for r in records:
            r['epochs'] = cfg.epochs
        tr.write_report(records, args.report)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    _require(args.parser, args.model, '--model')
    echo_config('evaluate', {'model': args.model, 'data': args.data, 'jaccard': args.jaccard, 'split': args.split,
                             'report': args.report})
    net = model.load_file(args.model)
    samples = ds.load_dataset(args.data)
    report = tr.evaluate(net, samples, args.jaccard)
    console.safe_print(f"accuracy {report.accuracy:.4f} over {report.n_test} samples at Jaccard threshold {args.jaccard}; "
                       f"{report.mean_inference_ms:.2f} ms per image")
    if args.report:
        tr.write_report(tr.report_records(report, args.split, 0, tr.config_checksum(tr.TrainConfig(split=args.split), net.config),
                                          timing=not args.no_timing), args.report)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    _require(args.parser, args.model, '--model')
    if args.jaccard is None and args.topk is None:
        args.jaccard = list(tr.default_jaccard_sweep)
    echo_config('sweep', {'model': args.model, 'data': args.data, 'jaccard': args.jaccard, 'topk': args.topk,
                          'q_threshold': args.q_threshold, 'report': args.report})
    net = model.load_file(args.model)
    samples = ds.load_dataset(args.data)
    predictions = tr.predict_maps(net, samples)
    records = list()
    if args.jaccard is not None:
        reports = tr.jaccard_sweep(net, samples, args.jaccard, predictions=predictions)
        console.safe_print("jaccard_threshold  accuracy  n_test")
        for r in reports:
            console.safe_print(f"{r.jaccard_threshold:17.2f}  {r.accuracy:8.4f}  {r.n_test:6d}")
            records.append({'jaccard_threshold': r.jaccard_threshold, 'accuracy': r.accuracy, 'n_test': r.n_test})
        monotone = all(b.accuracy <= a.accuracy for a, b in zip(reports, reports[1:]))
        console.safe_print(f"accuracy non-increasing in threshold: {'yes' if monotone else 'NO'}")
    else:
        rows = tr.multi_grasp_eval(net, samples, args.topk, args.q_threshold, predictions=predictions)
        console.safe_print("k  accuracy  grasps  passed")
        for row in rows:
            acc = '     n/a' if row.accuracy is None else f"{row.accuracy:8.4f}"
            console.safe_print(f"{row.k}  {acc}  {row.n_grasps:6d}  {row.n_passed:6d}")
            records.append(dataclasses.asdict(row))
    if args.report:
        tr.write_report(records, args.report)
    return EXIT_OK


# predict
def read_input_depth(path: Path) -> ds.DepthImage:
    """A depth image from a portable PNG or a Cornell point cloud, inpainted."""
    if path.suffix.lower() in depth_suffixes:
        img = ds.read_depth_png(path)
    elif path.suffix.lower() in point_cloud_suffixes:
        img = ds.parse_ascii_pcd_to_depth(path.read_text(), z_scale=ds.cornell_z_scale, path=path)
    else:
        raise errors.FormatError(f"don't know how to read a {path.suffix!r} file", str(path))
    if not np.all(img.valid):
        try:
            img = ds.inpaint_depth(img)
        except errors.EmptyInputError:
            raise errors.FormatError("image holds no valid depth", str(path))
    return img


def is_prediction_input(path: Path) -> bool:
    """Depth PNGs, .pcd clouds, and .txt files named like Cornell point clouds
    (rectangle files sit in the same directories).
    """
    suffix = path.suffix.lower()
    if suffix == '.txt':
        return ds.cornell_cloud_name.fullmatch(path.name) is not None
    return suffix in depth_suffixes + point_cloud_suffixes


forward_lock = threading.Lock()


def predict_one(net: model.GraspFCN,
                path: Path,
                args: argparse.Namespace,
                overlay_path: typing.Optional[Path],
                maps_path: typing.Optional[Path]) -> typing.List[gc.PixelGrasp]:
    size = net.config.input_size
    img = ds.fit_depth_to_size(read_input_depth(path), size)
    with forward_lock:                              # layers keep per-call caches
        q, cos, sin, w = net.forward(tr.make_input([ds.Sample(path.stem, path.stem, img, [])]), te.EVAL)
    maps = gc.smooth_quality(gc.GraspMapSet(*[p[0, 0].astype(np.float64) for p in (q, cos, sin, w)]), args.smooth)
    width_max = gc.scaled_width_max(size)
    min_sep = args.min_separation if args.min_separation is not None else gc.default_min_separation(size)
    grasps = gc.decode_top_k(maps, args.num_grasps, args.q_threshold, min_sep, width_max)
    if overlay_path is not None:
        rects = [gc.pixel_grasp_to_rectangle(g) for g in grasps if g.width_px > 0]
        render.save_image(render.draw_overlay(img.depth, rects, args.overlay_scale), overlay_path)
    if maps_path is not None:
        render.save_image(render.map_panels(maps, args.overlay_scale), maps_path)
    return grasps


def cmd_predict(args: argparse.Namespace) -> int:
    _require(args.parser, args.model, '--model')
    if args.q_threshold is None:
        args.q_threshold = tr.default_q_threshold(args.split)
    echo_config('predict', {k: v for k, v in vars(args).items() if k not in ('func', 'parser')})
    net = model.load_file(args.model)
    source = Path(args.input)
    if source.is_dir():
        if not args.out_dir:
            args.parser.error("--out-dir is required when --input is a directory")
        out_dir = console.validate_directory(Path(args.out_dir), 'prediction output')
        inputs = sorted(p for p in source.iterdir() if p.is_file() and is_prediction_input(p))
        with concurrent.futures.ThreadPoolExecutor(max_workers=worker_threads()) as pool:
            jobs = {p: pool.submit(predict_one, net, p, args, out_dir / f"{p.stem}_overlay.png", out_dir / f"{p.stem}_maps.png")
                    for p in inputs}
            for p, job in jobs.items():
                (out_dir / f"{p.stem}_grasps.txt").write_text(render.format_grasp_list(job.result()))
        console.safe_print(f"predicted grasps for {len(inputs)} images into {out_dir}")
        return EXIT_OK

    if not source.exists():
        raise errors.FormatError("input file does not exist", str(source))
    grasps = predict_one(net, source, args, Path(args.out_overlay) if args.out_overlay else None,
                         Path(args.out_maps) if args.out_maps else None)
    listing = render.format_grasp_list(grasps)
    if args.out_grasps:
        Path(args.out_grasps).write_text(listing)
    console.safe_print(listing, end='')
    return EXIT_OK


# Command line.
def build_parser() -> ArgumentParser:
    parser = ArgumentParser(description=module_docstring, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('-v', '--verbose', action='count', default=0, help="more progress output (repeatable)")
    parser.add_argument('-q', '--quiet', action='store_true', help="results and errors only")
    parser.add_argument('--logs-dir', default=None, help="where to write JSON problem reports")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', help="write a synthetic dataset")
    p.add_argument('--count', type=int, default=100)
    p.add_argument('--size', type=int, default=model.DESK_PRESET.input_size)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--bars', type=int, default=1, help="bars per scene")
    p.add_argument('--images-per-object', type=int, default=1)
    p.add_argument('--out-dir', required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('convert', help="convert a Cornell dataset to the portable layout")
    p.add_argument('--cornell-dir', required=True)
    p.add_argument('--out-dir', required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser('train', help="train (and cross-validate) a network")
    defaults = tr.TrainConfig()
    p.add_argument('--data', required=True)
    p.add_argument('--preset', choices=sorted(model.presets), default='desk')
    p.add_argument('--split', choices=ds.split_modes, default=defaults.split)
    p.add_argument('--folds', type=int, default=defaults.folds)
    p.add_argument('--epochs', type=int, default=defaults.epochs)
    p.add_argument('--batch', type=int, default=defaults.batch_size)
    p.add_argument('--lr', type=float, default=defaults.lr)
    p.add_argument('--seed', type=int, default=defaults.seed)
    p.add_argument('--jaccard', type=float, default=defaults.jaccard_threshold)
    p.add_argument('--no-augment', action='store_true')
    p.add_argument('--freeze-augmentation', action='store_true', help="one augmentation draw per sample, reused every epoch")
    p.add_argument('--out-model', required=True)
    p.add_argument('--report', default=None)
    p.add_argument('--loss-history', default=None)
    p.add_argument('--no-timing', action='store_true', help="write inference times as null")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('evaluate', help="score a trained network")
    p.add_argument('--model', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--jaccard', type=float, default=gc.default_jaccard_threshold)
    p.add_argument('--split', choices=ds.split_modes, default=ds.IMAGE_WISE, help="label for the report record")
    p.add_argument('--report', default=None)
    p.add_argument('--no-timing', action='store_true')
    p.set_defaults(func=cmd_evaluate, parser=p)

    p = sub.add_parser('sweep', help="Jaccard-threshold or top-k sweep")
    p.add_argument('--model', required=True)
    p.add_argument('--data', required=True)
    which = p.add_mutually_exclusive_group()
    which.add_argument('--jaccard', type=float_list, default=None, help="e.g. 0.25,0.30,0.35,0.40")
    which.add_argument('--topk', type=int_list, default=None, help="e.g. 1,2,3,4,5")
    p.add_argument('--q-threshold', type=float, default=0.5)
    p.add_argument('--report', default=None)
    p.set_defaults(func=cmd_sweep, parser=p)

    p = sub.add_parser('predict', help="predict grasps for depth images")
    p.add_argument('--model', required=True)
    p.add_argument('--input', required=True, help="depth PNG, Cornell point cloud, or a directory of them")
    p.add_argument('--num-grasps', type=int, default=1)
    p.add_argument('--q-threshold', type=float, default=None, help="default depends on --split")
    p.add_argument('--split', choices=ds.split_modes, default=ds.IMAGE_WISE, help="how the model was trained")
    p.add_argument('--min-separation', type=float, default=None)
    p.add_argument('--smooth', type=float, default=0.0, help="gaussian sigma applied to the quality map")
    p.add_argument('--overlay-scale', type=int, default=1)
    p.add_argument('--out-overlay', default=None)
    p.add_argument('--out-maps', default=None)
    p.add_argument('--out-grasps', default=None)
    p.add_argument('--out-dir', default=None, help="output directory when --input is a directory")
    p.set_defaults(func=cmd_predict, parser=p)
    return parser


def main(argv: typing.Optional[typing.List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    console.set_verbosity(0 if args.quiet else 2 + args.verbose)
    try:
        return args.func(args)
    except SystemExit as e:
        return e.code
    except errors.NumericalError as errr:
        console.safe_print(f"ERROR! Numerical failure: {errr}", file=sys.stderr)
        return EXIT_NUMERICAL
    except errors.ParameterRangeError as errr:
        console.safe_print(f"ERROR! {errr}", file=sys.stderr)
        return EXIT_USAGE
    except (errors.GraspMapError, OSError) as errr:
        console.safe_print(f"ERROR! {errr}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
