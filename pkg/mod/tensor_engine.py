#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""A minimal dense-tensor toolkit with hand-written reverse-mode derivatives for
exactly the layer set the grasp-map network needs: 2-D convolution, transposed
convolution, batch normalization, ReLU, the sigmoid/tanh output heads, the
elementwise add of the skip paths, the weighted-MSE grasp-map loss, and the Adam
optimizer.

Tensors are plain C-ordered numpy arrays, laid out batch x channels x height x
width for image data, so element (n, c, h, w) lives at flat index
((n*C + c)*H + h)*W + w. There is no general computation graph: every layer
records what its backward pass needs during the forward pass, and the network
walks its (static) layer list in reverse.

Convolutions are cross-correlations (no kernel flip). Windows are gathered with
numpy's sliding-window views and contracted with tensordot; the inverse
scatter-add used by backward passes and transposed convolutions loops over the
k*k kernel taps in a fixed order, so results are deterministic for a fixed
input. Setting GRASPMAP_CYTHON=1 swaps that scatter for the compiled kernel in
_scatter.pyx (built by build.sh, or on the fly through pyximport); it adds the
taps in the same order and gives bit-identical results.

This module is part of the graspmap toolkit. It is released under the GPL,
either version 3 or (at your option) any later version. See the file LICENSE
for a copy of this license.
"""


import dataclasses
import os
import typing

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from mod import console
from mod import errors


Tensor = np.ndarray

TRAIN, EVAL = 'train', 'eval'
modes = (TRAIN, EVAL)

precisions = {'f32': np.float32, 'f64': np.float64}
default_dtype = np.float32      # f64 is for finite-difference checks


def set_precision(name: str) -> None:
    """Set the dtype used for newly created parameters and buffers. NAME is 'f32'
    (training and inference) or 'f64' (gradient tests).
    """
    global default_dtype
    if name not in precisions:
        raise errors.ParameterRangeError('precision', name, str(sorted(precisions)))
    default_dtype = precisions[name]


def get_precision() -> str:
    """Return the name of the current default precision."""
    return [k for k, v in precisions.items() if v == default_dtype][0]


_scatter_kernel = None
if os.environ.get('GRASPMAP_CYTHON', '').strip() == '1':
    try:
        import pyximport        # http://cython.org
        pyximport.install(language_level=3)
        from mod import _scatter as _scatter_kernel
    except Exception as errr:
        console.debug_print(f"WARNING! Unable to load the Cython scatter kernel ({errr}); using the numpy path.", 1)
        _scatter_kernel = None


# Index bookkeeping.
def encode_index(shape: typing.Sequence[int],
                 n: int, c: int, h: int, w: int) -> int:
    """Map the element coordinates (N, C, H, W) of a tensor with 4-D SHAPE onto the
    flat row-major index ((n*C + c)*H + h)*W + w.
    """
    N, C, H, W = shape
    for name, val, extent in (('batch', n, N), ('channels', c, C), ('height', h, H), ('width', w, W)):
        if not 0 <= val < extent:
            raise errors.ParameterRangeError(name, val, f"[0, {extent})")
    return ((n * C + c) * H + h) * W + w


def decode_index(shape: typing.Sequence[int],
                 index: int) -> typing.Tuple[int, int, int, int]:
    """Inverse of encode_index(): map a flat INDEX back onto (n, c, h, w)."""
    N, C, H, W = shape
    if not 0 <= index < N * C * H * W:
        raise errors.ParameterRangeError('index', index, f"[0, {N * C * H * W})")
    index, w = divmod(index, W)
    index, h = divmod(index, H)
    n, c = divmod(index, C)
    return n, c, h, w


def zeros(shape: typing.Sequence[int],
          dtype: typing.Optional[np.dtype] = None) -> Tensor:
    """A zero tensor of SHAPE in DTYPE, or in the default precision if DTYPE is None."""
    return np.zeros(tuple(shape), dtype=default_dtype if dtype is None else dtype)


@dataclasses.dataclass
class Parameter:
    """A trainable tensor together with its gradient accumulator and Adam state."""
    name: str
    value: Tensor
    grad: Tensor = None
    adam_m: Tensor = None
    adam_v: Tensor = None
    step_count: int = 0

    def __post_init__(self) -> None:
        for attr in ('grad', 'adam_m', 'adam_v'):
            if getattr(self, attr) is None:
                setattr(self, attr, np.zeros_like(self.value))
            assert getattr(self, attr).shape == self.value.shape, f"ERROR! {attr} of {self.name} does not match its value's shape!"

    def zero_grad(self) -> None:
        self.grad[...] = 0


@dataclasses.dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer, as reported by GraspFCN.layer_specs()."""
    kind: str                       # one of layer_kinds
    kernel_size: int = 1
    stride: int = 1
    in_channels: int = 0
    out_channels: int = 0
    padding: int = 0
    output_padding: int = 0
    name: str = ''

    def __post_init__(self) -> None:
        if self.kind not in layer_kinds:
            raise errors.ParameterRangeError('kind', self.kind, str(layer_kinds))
        if self.kind in ('Conv', 'ConvTranspose'):
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise errors.ParameterRangeError('kernel_size', self.kernel_size, "odd and >= 1")
            if self.stride < 1:
                raise errors.ParameterRangeError('stride', self.stride, ">= 1")
            if not 0 <= self.output_padding < self.stride:
                raise errors.ParameterRangeError('output_padding', self.output_padding, f"[0, {self.stride})")


layer_kinds = ('Conv', 'ConvTranspose', 'BatchNorm', 'ReLU', 'Add', 'Sigmoid', 'Tanh')


# Shape checking.
def _check_4d(op: str, what: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise errors.ShapeMismatchError(op, f"{what} rank", 4, x.ndim)


def _check_dim(op: str, dimension: str, expected: int, got: int) -> None:
    if expected != got:
        raise errors.ShapeMismatchError(op, dimension, expected, got)


def _check_geometry(op: str, stride: int, padding: int) -> None:
    if stride < 1:
        raise errors.ParameterRangeError('stride', stride, ">= 1")
    if padding < 0:
        raise errors.ParameterRangeError('padding', padding, ">= 0")


def _pad(x: Tensor, padding: int) -> Tensor:
    if not padding:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(padded: Tensor,
             k: int,
             stride: int,
             out_h: int,
             out_w: int) -> Tensor:
    """Read-only view N x C x OUT_H x OUT_W x K x K of the K x K windows of PADDED
    taken every STRIDE pixels.
    """
    view = sliding_window_view(padded, (k, k), axis=(2, 3))
    return view[:, :, 0:(out_h - 1) * stride + 1:stride, 0:(out_w - 1) * stride + 1:stride]


def _scatter_windows(cols: Tensor,
                     padded_shape: typing.Tuple[int, int, int, int],
                     stride: int) -> Tensor:
    """Adjoint of _windows(): COLS is N x C x OUT_H x OUT_W x K x K; each window is
    added back onto a zero tensor of PADDED_SHAPE at the position it was read from.
    Taps are accumulated in (i, j) order.
    """
    out = np.zeros(padded_shape, dtype=cols.dtype)
    _, _, out_h, out_w, k, _ = cols.shape
    if _scatter_kernel is not None:
        _scatter_kernel.scatter_windows(np.ascontiguousarray(cols), out, stride)
        return out
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + (out_h - 1) * stride + 1:stride, j:j + (out_w - 1) * stride + 1:stride] += cols[:, :, :, :, i, j]
    return out


# Convolution.
def conv2d_forward(input: Tensor,
                   weight: Tensor,
                   bias: Tensor,
                   stride: int = 1,
                   padding: int = 0) -> Tensor:
    """Cross-correlate the N x Cin x H x W INPUT with the Cout x Cin x k x k WEIGHT,
    add BIAS (length Cout) and return N x Cout x H' x W', where
    H' = floor((H + 2*PADDING - k) / STRIDE) + 1.
    """
    op = 'conv2d_forward'
    _check_4d(op, 'input', input)
    _check_4d(op, 'weight', weight)
    _check_geometry(op, stride, padding)
    n, c, h, w = input.shape
    out_c, in_c, k, k2 = weight.shape
    _check_dim(op, 'in_channels', in_c, c)
    _check_dim(op, 'kernel_width', k, k2)
    _check_dim(op, 'bias_length', out_c, bias.shape[0] if bias.ndim == 1 else bias.shape)
    if h + 2 * padding < k or w + 2 * padding < k:
        raise errors.ShapeMismatchError(op, 'height/width', f">= {k - 2 * padding}", (h, w))
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    win = _windows(_pad(input, padding), k, stride, out_h, out_w)
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out + bias[None, :, None, None])


def conv2d_backward(grad_out: Tensor,
                    saved_input: Tensor,
                    weight: Tensor,
                    stride: int = 1,
                    padding: int = 0) -> typing.Tuple[Tensor, Tensor, Tensor]:
    """Gradients (grad_input, grad_weight, grad_bias) of conv2d_forward() given the
    gradient GRAD_OUT of its output, the SAVED_INPUT of the forward call, and its
    WEIGHT.
    """
    op = 'conv2d_backward'
    _check_4d(op, 'grad_out', grad_out)
    _check_4d(op, 'saved_input', saved_input)
    _check_geometry(op, stride, padding)
    n, c, h, w = saved_input.shape
    out_c, in_c, k, _ = weight.shape
    _check_dim(op, 'in_channels', in_c, c)
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    _check_dim(op, 'grad_out shape', (n, out_c, out_h, out_w), grad_out.shape)

    win = _windows(_pad(saved_input, padding), k, stride, out_h, out_w)
    grad_weight = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    cols = np.tensordot(grad_out, weight, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    grad_padded = _scatter_windows(cols, (n, c, h + 2 * padding, w + 2 * padding), stride)
    grad_input = np.ascontiguousarray(grad_padded[:, :, padding:padding + h, padding:padding + w])
    return grad_input, grad_weight, grad_bias


def conv_transpose_output_size(size: int,
                               kernel_size: int,
                               stride: int = 1,
                               padding: int = 0,
                               output_padding: int = 0) -> int:
    """(SIZE - 1)*STRIDE - 2*PADDING + KERNEL_SIZE + OUTPUT_PADDING."""
    return (size - 1) * stride - 2 * padding + kernel_size + output_padding


def conv_transpose2d_forward(input: Tensor,
                             weight: Tensor,
                             bias: Tensor,
                             stride: int = 1,
                             padding: int = 0,
                             output_padding: int = 0) -> Tensor:
    """Transposed convolution of the N x Cin x H x W INPUT with the Cin x Cout x k x k
    WEIGHT. The output is N x Cout x H' x W' with
    H' = (H - 1)*STRIDE - 2*PADDING + k + OUTPUT_PADDING. With the same weight array
    and geometry this is the exact adjoint of conv2d_forward() (bias aside).
    """
    op = 'conv_transpose2d_forward'
    _check_4d(op, 'input', input)
    _check_4d(op, 'weight', weight)
    _check_geometry(op, stride, padding)
    if not 0 <= output_padding < stride:
        raise errors.ParameterRangeError('output_padding', output_padding, f"[0, {stride})")
    n, c, h, w = input.shape
    in_c, out_c, k, k2 = weight.shape
    _check_dim(op, 'in_channels', in_c, c)
    _check_dim(op, 'kernel_width', k, k2)
    _check_dim(op, 'bias_length', out_c, bias.shape[0] if bias.ndim == 1 else bias.shape)
    out_h = conv_transpose_output_size(h, k, stride, padding, output_padding)
    out_w = conv_transpose_output_size(w, k, stride, padding, output_padding)
    if out_h < 1 or out_w < 1:
        raise errors.ShapeMismatchError(op, 'output height/width', ">= 1", (out_h, out_w))
    cols = np.tensordot(input, weight, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    buf = _scatter_windows(cols, (n, out_c, out_h + 2 * padding, out_w + 2 * padding), stride)
    out = buf[:, :, padding:padding + out_h, padding:padding + out_w]
    return np.ascontiguousarray(out + bias[None, :, None, None])


def conv_transpose2d_backward(grad_out: Tensor,
                              saved_input: Tensor,
                              weight: Tensor,
                              stride: int = 1,
                              padding: int = 0,
                              output_padding: int = 0) -> typing.Tuple[Tensor, Tensor, Tensor]:
    """Gradients (grad_input, grad_weight, grad_bias) of conv_transpose2d_forward()."""
    op = 'conv_transpose2d_backward'
    _check_4d(op, 'grad_out', grad_out)
    _check_4d(op, 'saved_input', saved_input)
    _check_geometry(op, stride, padding)
    n, c, h, w = saved_input.shape
    in_c, out_c, k, _ = weight.shape
    _check_dim(op, 'in_channels', in_c, c)
    out_h = conv_transpose_output_size(h, k, stride, padding, output_padding)
    out_w = conv_transpose_output_size(w, k, stride, padding, output_padding)
    _check_dim(op, 'grad_out shape', (n, out_c, out_h, out_w), grad_out.shape)

    win = _windows(_pad(grad_out, padding), k, stride, h, w)
    grad_input = np.ascontiguousarray(np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
    grad_weight = np.tensordot(saved_input, win, axes=([0, 2, 3], [0, 2, 3]))
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_input, grad_weight, grad_bias


# Batch normalization.
@dataclasses.dataclass
class BatchNormCache:
    """What batchnorm2d_backward() needs from the forward call."""
    mode: str
    normalized: Tensor
    inv_std: Tensor
    gamma: Tensor


def batchnorm2d(input: Tensor,
                gamma: Tensor,
                beta: Tensor,
                running_mean: Tensor,
                running_var: Tensor,
                mode: str = TRAIN,
                momentum: float = 0.1,
                epsilon: float = 1e-5) -> typing.Tuple[Tensor, BatchNormCache]:
    """Per-channel batch normalization of the N x C x H x W INPUT.

    In TRAIN mode the batch statistics over (N, H, W) are used, and RUNNING_MEAN
    and RUNNING_VAR are updated in place with MOMENTUM (the running variance takes
    the unbiased batch variance). In EVAL mode the running statistics are used and
    nothing is updated. Returns the output gamma*normalized + beta and the cache
    for batchnorm2d_backward().
    """
    op = 'batchnorm2d'
    _check_4d(op, 'input', input)
    if mode not in modes:
        raise errors.ParameterRangeError('mode', mode, str(modes))
    if input.size == 0:
        raise errors.EmptyInputError(f"{op}: zero-size batch {input.shape}")
    c = input.shape[1]
    for name, vec in (('gamma', gamma), ('beta', beta), ('running_mean', running_mean), ('running_var', running_var)):
        _check_dim(op, f"{name} length", c, vec.shape[0])

    axes = (0, 2, 3)
    if mode == TRAIN:
        count = input.shape[0] * input.shape[2] * input.shape[3]
        mean = input.mean(axis=axes)
        var = input.var(axis=axes)
        running_mean *= (1 - momentum)
        running_mean += momentum * mean
        running_var *= (1 - momentum)
        running_var += momentum * (var * count / (count - 1) if count > 1 else var)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + epsilon)
    normalized = (input - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * normalized + beta[None, :, None, None]
    return out.astype(input.dtype, copy=False), BatchNormCache(mode, normalized, inv_std, gamma)


def batchnorm2d_backward(grad_out: Tensor,
                         cache: BatchNormCache) -> typing.Tuple[Tensor, Tensor, Tensor]:
    """Gradients (grad_input, grad_gamma, grad_beta) of batchnorm2d()."""
    _check_dim('batchnorm2d_backward', 'grad_out shape', cache.normalized.shape, grad_out.shape)
    axes = (0, 2, 3)
    xhat = cache.normalized
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    grad_xhat = grad_out * cache.gamma[None, :, None, None]
    inv_std = cache.inv_std[None, :, None, None]
    if cache.mode == EVAL:
        return grad_xhat * inv_std, grad_gamma, grad_beta
    count = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    grad_input = (inv_std / count) * (count * grad_xhat
                                      - grad_xhat.sum(axis=axes)[None, :, None, None]
                                      - xhat * (grad_xhat * xhat).sum(axis=axes)[None, :, None, None])
    return grad_input.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


# Pointwise.
def relu(input: Tensor) -> Tensor:
    return np.maximum(input, 0)


def relu_backward(grad_out: Tensor,
                  saved_input: Tensor) -> Tensor:
    """Pass GRAD_OUT through where SAVED_INPUT > 0."""
    _check_dim('relu_backward', 'grad_out shape', saved_input.shape, grad_out.shape)
    return grad_out * (saved_input > 0)


def sigmoid(input: Tensor) -> Tensor:
    return special.expit(input)


def sigmoid_backward(grad_out: Tensor,
                     saved_output: Tensor) -> Tensor:
    return grad_out * saved_output * (1 - saved_output)


def tanh(input: Tensor) -> Tensor:
    return np.tanh(input)


def tanh_backward(grad_out: Tensor,
                  saved_output: Tensor) -> Tensor:
    return grad_out * (1 - saved_output * saved_output)


def add(a: Tensor,
        b: Tensor) -> Tensor:
    """Elementwise sum of two same-shaped tensors (no broadcasting). Its backward
    pass hands the incoming gradient unchanged to both operands.
    """
    _check_dim('add', 'operand shape', a.shape, b.shape)
    return a + b


# Loss.
def weighted_mse_loss(pred_q: Tensor, pred_cos: Tensor, pred_sin: Tensor, pred_w: Tensor,
                      target_q: Tensor, target_cos: Tensor, target_sin: Tensor, target_w: Tensor,
                      weights: typing.Any) -> typing.Tuple[float, typing.Tuple[Tensor, Tensor, Tensor, Tensor]]:
    """The weighted grasp-map loss

        (1 / 2n) * [lq * sum (q^ - q)^2 + lphi * sum (cos^ - cos)^2
                    + lphi * sum (sin^ - sin)^2 + lw * sum (w^ - w)^2]

    over all pixels of N x 1 x H x W planes, n = N. WEIGHTS supplies lambda_q,
    lambda_phi and lambda_w (a grasp_core.LossWeights). The angle weight applies to
    both angle planes. Returns the loss and its exact gradients with respect to the
    four prediction planes.
    """
    op = 'weighted_mse_loss'
    preds = (pred_q, pred_cos, pred_sin, pred_w)
    targets = (target_q, target_cos, target_sin, target_w)
    reference = pred_q.shape
    if len(reference) != 4 or reference[1] != 1:
        raise errors.ShapeMismatchError(op, 'plane shape', 'N x 1 x H x W', reference)
    for name, t in zip(('pred_q', 'pred_cos', 'pred_sin', 'pred_w', 'target_q', 'target_cos', 'target_sin', 'target_w'),
                       preds + targets):
        _check_dim(op, f"{name} shape", reference, t.shape)
    n = reference[0]
    lambdas = (weights.lambda_q, weights.lambda_phi, weights.lambda_phi, weights.lambda_w)
    residuals = [p - t for p, t in zip(preds, targets)]
    loss = sum(lam * float(np.sum(np.square(r, dtype=np.float64))) for lam, r in zip(lambdas, residuals)) / (2 * n)
    grads = tuple((r * (lam / n)).astype(r.dtype, copy=False) for lam, r in zip(lambdas, residuals))
    return loss, grads


# Optimizer.
def adam_step(param: Parameter,
              lr: float = 0.001,
              beta1: float = 0.9,
              beta2: float = 0.999,
              epsilon: float = 1e-8) -> Parameter:
    """One Adam update of PARAM from its accumulated gradient, with bias correction.
    Updates PARAM in place and returns it.
    """
    if param.step_count < 0:
        raise errors.ParameterRangeError(f"{param.name}.step_count", param.step_count, ">= 0")
    if not np.all(np.isfinite(param.grad)):
        raise errors.NumericalError(param.name, 'non-finite gradient')
    param.step_count += 1
    t = param.step_count
    param.adam_m *= beta1
    param.adam_m += (1 - beta1) * param.grad
    param.adam_v *= beta2
    param.adam_v += (1 - beta2) * np.square(param.grad)
    m_hat = param.adam_m / (1 - beta1 ** t)
    v_hat = param.adam_v / (1 - beta2 ** t)
    param.value -= (lr * m_hat / (np.sqrt(v_hat) + epsilon)).astype(param.value.dtype, copy=False)
    return param


def he_normal(rng: np.random.Generator,
              shape: typing.Sequence[int],
              fan_in: int) -> Tensor:
    """He (fan-in) normal initialization: N(0, 2 / FAN_IN), drawn from RNG."""
    return (rng.standard_normal(tuple(shape)) * np.sqrt(2.0 / fan_in)).astype(default_dtype)


# Stateful layers. Each records what its backward pass needs during forward().
class Conv2d(object):
    """Convolution layer with 'same'-style default padding (k - 1) / 2."""
    kind = 'Conv'

    def __init__(self, name: str,
                 in_channels: int,
                 out_channels: int,
                 kernel_size: int,
                 stride: int = 1,
                 padding: typing.Optional[int] = None) -> None:
        self.spec = LayerSpec(self.kind, kernel_size, stride, in_channels, out_channels,
                              (kernel_size - 1) // 2 if padding is None else padding, name=name)
        self.weight = Parameter(name + '.weight', zeros((out_channels, in_channels, kernel_size, kernel_size)))
        self.bias = Parameter(name + '.bias', zeros((out_channels,)))
        self._saved = None

    @property
    def fan_in(self) -> int:
        return self.spec.in_channels * self.spec.kernel_size ** 2

    def parameters(self) -> typing.List[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: Tensor) -> Tensor:
        self._saved = x
        return conv2d_forward(x, self.weight.value, self.bias.value, self.spec.stride, self.spec.padding)

    def backward(self, grad_out: Tensor) -> Tensor:
        assert self._saved is not None, f"ERROR! backward() called on {self.spec.name} before forward()!"
        gi, gw, gb = conv2d_backward(grad_out, self._saved, self.weight.value, self.spec.stride, self.spec.padding)
        self.weight.grad += gw
        self.bias.grad += gb
        return gi


class ConvTranspose2d(Conv2d):
    """Transposed-convolution layer; weight is in_channels x out_channels x k x k."""
    kind = 'ConvTranspose'

    def __init__(self, name: str,
                 in_channels: int,
                 out_channels: int,
                 kernel_size: int,
                 stride: int = 1,
                 padding: typing.Optional[int] = None,
                 output_padding: int = 0) -> None:
        self.spec = LayerSpec(self.kind, kernel_size, stride, in_channels, out_channels,
                              (kernel_size - 1) // 2 if padding is None else padding, output_padding, name=name)
        self.weight = Parameter(name + '.weight', zeros((in_channels, out_channels, kernel_size, kernel_size)))
        self.bias = Parameter(name + '.bias', zeros((out_channels,)))
        self._saved = None

    def forward(self, x: Tensor) -> Tensor:
        self._saved = x
        s = self.spec
        return conv_transpose2d_forward(x, self.weight.value, self.bias.value, s.stride, s.padding, s.output_padding)

    def backward(self, grad_out: Tensor) -> Tensor:
        assert self._saved is not None, f"ERROR! backward() called on {self.spec.name} before forward()!"
        s = self.spec
        gi, gw, gb = conv_transpose2d_backward(grad_out, self._saved, self.weight.value, s.stride, s.padding, s.output_padding)
        self.weight.grad += gw
        self.bias.grad += gb
        return gi


class BatchNorm2d(object):
    kind = 'BatchNorm'

    def __init__(self, name: str,
                 channels: int,
                 momentum: float = 0.1,
                 epsilon: float = 1e-5) -> None:
        self.spec = LayerSpec(self.kind, in_channels=channels, out_channels=channels, name=name)
        self.gamma = Parameter(name + '.gamma', np.ones((channels,), dtype=default_dtype))
        self.beta = Parameter(name + '.beta', zeros((channels,)))
        self.running_mean = zeros((channels,))
        self.running_var = np.ones((channels,), dtype=default_dtype)
        self.momentum, self.epsilon = momentum, epsilon
        self._cache = None

    def parameters(self) -> typing.List[Parameter]:
        return [self.gamma, self.beta]

    def forward(self, x: Tensor, mode: str = TRAIN) -> Tensor:
        out, self._cache = batchnorm2d(x, self.gamma.value, self.beta.value, self.running_mean, self.running_var,
                                       mode, self.momentum, self.epsilon)
        return out

    def backward(self, grad_out: Tensor) -> Tensor:
        assert self._cache is not None, f"ERROR! backward() called on {self.spec.name} before forward()!"
        gi, gg, gb = batchnorm2d_backward(grad_out, self._cache)
        self.gamma.grad += gg
        self.beta.grad += gb
        return gi


class ReLU(object):
    kind = 'ReLU'

    def __init__(self, name: str = 'relu') -> None:
        self.spec = LayerSpec(self.kind, name=name)
        self._saved = None

    def parameters(self) -> typing.List[Parameter]:
        return []

    def forward(self, x: Tensor) -> Tensor:
        self._saved = x
        return relu(x)

    def backward(self, grad_out: Tensor) -> Tensor:
        return relu_backward(grad_out, self._saved)


# Gradient checking, used by the test suite and handy when adding layers.
def numerical_gradient(f: typing.Callable[[], float],
                       x: Tensor,
                       eps: float = 1e-5) -> Tensor:
    """Central finite-difference gradient of the scalar function F (which reads X,
    among other things) with respect to every element of X. X is perturbed in place
    and restored afterwards.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    assert np.shares_memory(flat, x), "ERROR! numerical_gradient() needs a contiguous tensor!"
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = f()
        flat[i] = original - eps
        minus = f()
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2 * eps)
    return grad


def max_relative_error(analytic: Tensor,
                       numeric: Tensor,
                       scale_floor: float = 1e-3) -> float:
    """Largest elementwise |ANALYTIC - NUMERIC| / max(|ANALYTIC|, |NUMERIC|). Elements
    whose magnitude is below SCALE_FLOOR times the largest magnitude of either array
    are judged against that floor instead, so that entries that are zero up to
    rounding do not dominate.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    if scale == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), scale_floor * scale)
    return float(np.max(np.abs(a - n) / denom))
