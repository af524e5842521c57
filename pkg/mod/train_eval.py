#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Training the grasp-map network and scoring it with the rectangle metric.

train() runs the usual loop: shuffle, batch, augment on the fly, rasterize the
ground-truth rectangles into target maps, forward, weighted-MSE loss, backward,
Adam. evaluate() decodes the single best grasp from each test image's predicted
maps and counts the images where that grasp passes the rectangle metric
(angle within 30 degrees and Jaccard index above the threshold) against at least
one labelled rectangle. jaccard_sweep() and multi_grasp_eval() rescore one cached
set of predictions at several Jaccard thresholds or several grasp counts, and
cross_validate() wraps it all in k-fold cross-validation.

Everything is deterministic for a fixed seed, except for the measured inference
times.

This module is part of the graspmap toolkit. It is released under the GPL,
either version 3 or (at your option) any later version. See the file LICENSE
for a copy of this license.
"""


import dataclasses
import hashlib
import json
import math
import time
import typing

from pathlib import Path

import numpy as np

from mod import console
from mod import dataset as ds
from mod import errors
from mod import grasp_core as gc
from mod import model
from mod import tensor_engine as te


default_jaccard_sweep = (0.25, 0.30, 0.35, 0.40)
default_top_k_sweep = (1, 2, 3, 4, 5)


def default_q_threshold(split: str) -> float:
    """Quality floor for multi-grasp output: 0.5 for image-wise trained networks, 0.2
    for object-wise ones.
    """
    if split not in ds.split_modes:
        raise errors.ParameterRangeError('split', split, str(ds.split_modes))
    return 0.5 if split == ds.IMAGE_WISE else 0.2


@dataclasses.dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.001
    loss_weights: gc.LossWeights = dataclasses.field(default_factory=gc.LossWeights)
    folds: int = 5
    split: str = ds.IMAGE_WISE
    seed: int = 0
    width_max: typing.Optional[float] = None        # None: scaled from the network input size
    jaccard_threshold: float = gc.default_jaccard_threshold
    augment: bool = True
    freeze_augmentation: bool = False               # one draw per sample, reused every epoch
    logs_directory: typing.Optional[str] = None

    def __post_init__(self) -> None:
        if isinstance(self.loss_weights, dict):
            self.loss_weights = gc.LossWeights(**self.loss_weights)
        if self.epochs < 0:
            raise errors.ParameterRangeError('epochs', self.epochs, ">= 0")
        if self.batch_size < 1:
            raise errors.ParameterRangeError('batch_size', self.batch_size, ">= 1")
        if not self.lr > 0:
            raise errors.ParameterRangeError('lr', self.lr, "> 0")
        if self.folds < 1:
            raise errors.ParameterRangeError('folds', self.folds, ">= 1")
        if self.split not in ds.split_modes:
            raise errors.ParameterRangeError('split', self.split, str(ds.split_modes))
        if self.seed < 0:
            raise errors.ParameterRangeError('seed', self.seed, ">= 0")
        if self.width_max is not None and not self.width_max > 0:
            raise errors.ParameterRangeError('width_max', self.width_max, "> 0")

    def resolved_width_max(self, input_size: int) -> float:
        return self.width_max if self.width_max is not None else gc.scaled_width_max(input_size)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class EvalReport:
    accuracy: float
    per_fold: typing.List[float]
    jaccard_threshold: float
    mean_inference_ms: typing.Optional[float]
    n_test: int
    passed: typing.List[bool] = dataclasses.field(default_factory=list)
    fold_reports: typing.List['EvalReport'] = dataclasses.field(default_factory=list)

    def __post_init__(self) -> None:
        assert 0 <= self.accuracy <= 1, f"ERROR! accuracy {self.accuracy} outside [0, 1]!"


@dataclasses.dataclass
class Prediction:
    """Network output for one test sample (cropped to the network input size)."""
    sample: ds.Sample
    maps: gc.GraspMapSet
    inference_ms: float


@dataclasses.dataclass
class TopKResult:
    k: int
    accuracy: typing.Optional[float]        # None when no grasp was emitted
    n_grasps: int
    n_passed: int


def config_checksum(train_cfg: TrainConfig,
                    model_cfg: model.GraspFCNConfig) -> str:
    """Short digest identifying a (training, model) configuration pair in reports."""
    blob = json.dumps({'train': train_cfg.to_dict(), 'model': model_cfg.to_dict()}, sort_keys=True, default=str)
    return hashlib.blake2b(blob.encode('utf-8'), digest_size=8).hexdigest()


# Batches.
def fit_sample(s: ds.Sample,
               input_size: int) -> ds.Sample:
    """S as the network sees it: unchanged if it already has the input size, its
    central window otherwise.
    """
    if s.depth.shape == (input_size, input_size):
        return s
    if min(s.depth.shape) < input_size:
        raise errors.ShapeMismatchError('fit_sample', f"sample {s.id} size", f">= {input_size}", s.depth.shape)
    return ds.center_crop_sample(s, input_size)


def make_input(samples: typing.Sequence[ds.Sample]) -> te.Tensor:
    """N x 1 x H x W network input from same-sized samples."""
    return np.stack([ds.normalize_depth(s.depth.depth)[None] for s in samples]).astype(te.default_dtype)


def make_targets(samples: typing.Sequence[ds.Sample],
                 width_max: float) -> typing.Tuple[te.Tensor, te.Tensor, te.Tensor, te.Tensor]:
    """The four N x 1 x H x W target planes: each sample's rectangles rasterized in
    file order.
    """
    maps = [gc.rasterize_rects(s.rects, s.depth.height, s.depth.width, width_max) for s in samples]
    return tuple(np.stack([m.planes()[i][None] for m in maps]).astype(te.default_dtype) for i in range(4))


def _training_view(s: ds.Sample,
                   input_size: int,
                   params: typing.Optional[ds.AugmentParams]) -> ds.Sample:
    if params is None:
        return fit_sample(s, input_size)
    try:
        return ds.augment_sample(s, params, input_size)
    except errors.EmptyInputError:
        console.debug_print(f"augmentation lost every rectangle of {s.id}; using the unaugmented view", 3)
        return fit_sample(s, input_size)


# Training.
def train(net: model.GraspFCN,
          train_samples: typing.Sequence[ds.Sample],
          cfg: TrainConfig,
          progress_sink: typing.Optional[typing.Callable[[int, float], None]] = None) -> typing.Tuple[model.GraspFCN, typing.List[float]]:
    """Train NET in place on TRAIN_SAMPLES for CFG.epochs epochs. Returns NET and the
    per-epoch mean batch loss. PROGRESS_SINK, if given, is called with
    (epoch, mean loss) after every epoch.
    """
    if not train_samples:
        raise errors.EmptyInputError("train: no training samples")
    size = net.config.input_size
    width_max = cfg.resolved_width_max(size)
    order_rng = np.random.default_rng(cfg.seed)
    augment_rng = np.random.default_rng([cfg.seed, 1])
    frozen = None
    if cfg.augment and cfg.freeze_augmentation:
        frozen = [ds.AugmentParams.draw(augment_rng, s.depth.shape, size) for s in train_samples]

    history = list()
    for epoch in range(cfg.epochs):
        losses = list()
        order = order_rng.permutation(len(train_samples))
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            chosen = [int(i) for i in order[start:start + cfg.batch_size]]
            views = list()
            for i in chosen:
                params = None
                if cfg.augment:
                    params = frozen[i] if frozen else ds.AugmentParams.draw(augment_rng, train_samples[i].depth.shape, size)
                views.append(_training_view(train_samples[i], size, params))
            targets = make_targets(views, width_max)

            net.zero_grad()
            preds = net.forward(make_input(views), te.TRAIN)
            loss, grads = te.weighted_mse_loss(*preds, *targets, cfg.loss_weights)
            if not math.isfinite(loss):
                console.document_problem('nonfinite_loss', {'epoch': epoch, 'batch': b, 'loss': loss,
                                                            'samples': [train_samples[i].id for i in chosen],
                                                            'config': cfg.to_dict()},
                                         cfg.logs_directory)
                raise errors.NumericalError(f"epoch {epoch}, batch {b}", 'non-finite loss')
            net.backward(*grads)
            try:
                for p in net.parameters():
                    te.adam_step(p, cfg.lr)
            except errors.NumericalError as errr:
                raise errors.NumericalError(f"epoch {epoch}, batch {b}, parameter {errr.where}", errr.details)
            losses.append(loss)
            console.debug_print(f"epoch {epoch}, batch {b}: loss {loss:.6f}", 3)
        mean = float(np.mean(losses))
        history.append(mean)
        console.debug_print(f"epoch {epoch + 1}/{cfg.epochs}: mean loss {mean:.6f}", 2)
        if progress_sink is not None:
            progress_sink(epoch, mean)
    return net, history


# Prediction and scoring.
def scoring_views(samples: typing.Sequence[ds.Sample],
                  input_size: int) -> typing.List[ds.Sample]:
    """SAMPLES cut to INPUT_SIZE, minus those left without a positive rectangle
    (none labelled, or all outside the central window). Dropped samples get a
    warning.
    """
    ret = list()
    for s in samples:
        try:
            view = fit_sample(s, input_size)
        except errors.EmptyInputError:
            view = None
        if view is None or not view.rects:
            console.debug_print(f"WARNING! sample {s.id} has no positive rectangle inside the network window; not scored", 1)
            continue
        ret.append(view)
    return ret


def predict_maps(net: model.GraspFCN,
                 samples: typing.Sequence[ds.Sample]) -> typing.List[Prediction]:
    """Eval-mode predictions for the scorable SAMPLES (see scoring_views()), one
    forward pass per sample, timed.
    """
    ret = list()
    for view in scoring_views(samples, net.config.input_size):
        x = make_input([view])
        start = time.perf_counter()
        q, cos, sin, w = net.forward(x, te.EVAL)
        elapsed = (time.perf_counter() - start) * 1000
        maps = gc.GraspMapSet(*[plane[0, 0].astype(np.float64) for plane in (q, cos, sin, w)])
        ret.append(Prediction(view, maps, elapsed))
    return ret


def _best_rectangle(p: Prediction,
                    width_max: float) -> typing.Optional[gc.GraspRectangle]:
    g = gc.decode_best_grasp(p.maps, width_max)
    if not g.width_px > 0:
        return None
    return gc.pixel_grasp_to_rectangle(g)


def _check_size(net: model.GraspFCN,
                samples: typing.Sequence[ds.Sample]) -> None:
    if not samples:
        raise errors.EmptyInputError("no test samples")
    for s in samples:
        if min(s.depth.shape) < net.config.input_size:
            raise errors.ShapeMismatchError('evaluate', f"sample {s.id} size", f">= {net.config.input_size}", s.depth.shape)


def _require_predictions(predictions: typing.Sequence[Prediction]) -> None:
    if not predictions:
        raise errors.EmptyInputError("no test sample has a positive rectangle to score against")


def _mean_ms(predictions: typing.Sequence[Prediction]) -> float:
    return float(np.mean([p.inference_ms for p in predictions]))


def evaluate(net: model.GraspFCN,
             test_samples: typing.Sequence[ds.Sample],
             jaccard_threshold: float = gc.default_jaccard_threshold,
             width_max: typing.Optional[float] = None,
             predictions: typing.Optional[typing.List[Prediction]] = None) -> EvalReport:
    """Fraction of TEST_SAMPLES whose best predicted grasp passes the rectangle
    metric at JACCARD_THRESHOLD. PREDICTIONS may supply cached predict_maps() output.
    """
    return jaccard_sweep(net, test_samples, [jaccard_threshold], width_max, predictions)[0]


def jaccard_sweep(net: model.GraspFCN,
                  test_samples: typing.Sequence[ds.Sample],
                  thresholds: typing.Sequence[float],
                  width_max: typing.Optional[float] = None,
                  predictions: typing.Optional[typing.List[Prediction]] = None) -> typing.List[EvalReport]:
    """One EvalReport per Jaccard threshold (strictly increasing), all from a single
    set of predictions.
    """
    if not thresholds:
        raise errors.EmptyInputError("jaccard_sweep: no thresholds")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise errors.ParameterRangeError('thresholds', list(thresholds), "strictly increasing")
    _check_size(net, test_samples)
    width_max = width_max if width_max is not None else gc.scaled_width_max(net.config.input_size)
    if predictions is None:
        predictions = predict_maps(net, test_samples)
    _require_predictions(predictions)
    best = [_best_rectangle(p, width_max) for p in predictions]
    reports = list()
    for t in thresholds:
        passed = [r is not None and gc.rectangle_metric_match(r, p.sample.rects, t) for r, p in zip(best, predictions)]
        accuracy = sum(passed) / len(passed)
        reports.append(EvalReport(accuracy, [accuracy], t, _mean_ms(predictions), len(passed), passed))
        console.debug_print(f"Jaccard threshold {t:.2f}: accuracy {accuracy:.4f} over {len(passed)} samples", 2)
    return reports


def multi_grasp_eval(net: model.GraspFCN,
                     test_samples: typing.Sequence[ds.Sample],
                     k_values: typing.Sequence[int],
                     q_threshold: float,
                     min_separation: typing.Optional[float] = None,
                     width_max: typing.Optional[float] = None,
                     jaccard_threshold: float = gc.default_jaccard_threshold,
                     predictions: typing.Optional[typing.List[Prediction]] = None) -> typing.List[TopKResult]:
    """For each K in K_VALUES, decode up to K grasps per sample (quality at least
    Q_THRESHOLD) and score every emitted grasp. Accuracy is passing grasps over all
    emitted grasps, pooled over the samples, or None if nothing was emitted.
    """
    if not k_values or min(k_values) < 1:
        raise errors.ParameterRangeError('k_values', list(k_values), "non-empty, all >= 1")
    _check_size(net, test_samples)
    size = net.config.input_size
    width_max = width_max if width_max is not None else gc.scaled_width_max(size)
    min_separation = min_separation if min_separation is not None else gc.default_min_separation(size)
    if predictions is None:
        predictions = predict_maps(net, test_samples)
    _require_predictions(predictions)
    ret = list()
    for k in k_values:
        emitted = passed = 0
        for p in predictions:
            for g in gc.decode_top_k(p.maps, k, q_threshold, min_separation, width_max):
                emitted += 1
                if g.width_px > 0 and gc.rectangle_metric_match(gc.pixel_grasp_to_rectangle(g), p.sample.rects, jaccard_threshold):
                    passed += 1
        ret.append(TopKResult(k, passed / emitted if emitted else None, emitted, passed))
        console.debug_print(f"top-{k}: {passed} of {emitted} grasps pass", 2)
    return ret


# Cross-validation.
def fold_seed(seed: int,
              fold: int) -> int:
    return int(np.random.default_rng([seed, fold, 2]).integers(0, 2 ** 31))


def cross_validate(samples: typing.Sequence[ds.Sample],
                   cfg: TrainConfig,
                   model_cfg: model.GraspFCNConfig,
                   progress_sink: typing.Optional[typing.Callable[[int, float], None]] = None) -> EvalReport:
    """CFG.folds-fold cross-validation: for each fold a fresh network (fold-specific
    seed) is trained on the training part and evaluated on the test part. The
    aggregate accuracy is the mean of the fold accuracies; the fold reports are kept
    in fold_reports.
    """
    reports = list()
    for f, (train_idx, test_idx) in enumerate(ds.split_folds(samples, cfg.split, cfg.folds, cfg.seed)):
        console.debug_print(f"fold {f + 1}/{cfg.folds}: {len(train_idx)} training, {len(test_idx)} test samples", 2)
        try:
            seed = fold_seed(cfg.seed, f)
            net = model.build(model_cfg, seed)
            net, _ = train(net, [samples[i] for i in train_idx], dataclasses.replace(cfg, seed=seed), progress_sink)
            reports.append(evaluate(net, [samples[i] for i in test_idx], cfg.jaccard_threshold, cfg.width_max))
        except errors.GraspMapError as errr:
            errr.args = (f"fold {f}: {errr}",)
            raise
    per_fold = [r.accuracy for r in reports]
    return EvalReport(float(np.mean(per_fold)), per_fold, cfg.jaccard_threshold,
                      float(np.mean([r.mean_inference_ms for r in reports])), sum(r.n_test for r in reports),
                      [b for r in reports for b in r.passed], reports)


# Report files.
def report_records(report: EvalReport,
                   split: str,
                   seed: int,
                   checksum: str,
                   timing: bool = True) -> typing.List[typing.Dict[str, typing.Any]]:
    """One record per fold report plus one aggregate record. With TIMING False the
    inference time is written as None so that reruns produce identical bytes.
    """
    def record(r: EvalReport, fold: typing.Union[int, str]) -> typing.Dict[str, typing.Any]:
        return {'split': split, 'fold': fold, 'jaccard_threshold': r.jaccard_threshold, 'accuracy': r.accuracy,
                'n_test': r.n_test, 'mean_inference_ms': r.mean_inference_ms if timing else None,
                'seed': seed, 'config_checksum': checksum}
    return [record(r, i) for i, r in enumerate(report.fold_reports)] + [record(report, 'aggregate')]


def write_report(records: typing.Iterable[typing.Dict[str, typing.Any]],
                 path: typing.Union[str, Path]) -> None:
    Path(path).write_text(''.join(json.dumps(r, sort_keys=True) + '\n' for r in records))


def write_loss_history(history: typing.Sequence[float],
                       path: typing.Union[str, Path]) -> None:
    """Two columns: epoch (from 1) and mean loss."""
    Path(path).write_text(''.join(f"{i}\t{loss:.10g}\n" for i, loss in enumerate(history, start=1)))
