#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""The grasp-map network: a fully convolutional encoder-decoder that takes one
depth image and predicts, for every pixel, grasp quality, the doubled-angle cos
and sin, and normalized gripper width.

The encoder is six convolution + batch-norm + ReLU blocks; the decoder mirrors it
with six transposed-convolution + batch-norm + ReLU blocks. At every decoder block
the encoder activation of the same resolution goes through a 3 x 3 convolution
and is added to the decoder activation. A last 3 x 3 convolution produces the four
output planes: sigmoid heads for quality and width, tanh heads for the angle
planes.

Weights are stored in a small versioned binary format:

    b"GRASPFCN"  u32 version  u32 n  n bytes of JSON config
    every parameter and batch-norm running statistic, build order, '<f4'
    8-byte BLAKE2b checksum of everything before it

This module is part of the graspmap toolkit. It is released under the GPL,
either version 3 or (at your option) any later version. See the file LICENSE
for a copy of this license.
"""


import dataclasses
import hashlib
import json
import struct
import typing

from pathlib import Path

import numpy as np

from mod import console
from mod import errors
from mod import tensor_engine as te


weight_magic = b"GRASPFCN"
weight_format_version = 1
checksum_size = 8
final_kernel = 3

n_blocks = 6


@dataclasses.dataclass(frozen=True)
class GraspFCNConfig:
    input_size: int = 96
    down_kernels: typing.Tuple[int, ...] = (9, 5, 3, 3, 3, 3)
    up_kernels: typing.Tuple[int, ...] = (3, 3, 3, 5, 9, 5)
    down_channels: typing.Tuple[int, ...] = (8, 16, 16, 32, 32, 32)
    down_strides: typing.Tuple[int, ...] = (2, 2, 2, 1, 1, 1)
    up_strides: typing.Tuple[int, ...] = (1, 1, 1, 2, 2, 2)
    skip_kernel: int = 3
    out_channels: int = 4
    use_skips: bool = True
    name: str = 'desk'

    def __post_init__(self) -> None:
        for field in ('down_kernels', 'up_kernels', 'down_channels', 'down_strides', 'up_strides'):
            object.__setattr__(self, field, tuple(int(i) for i in getattr(self, field)))
            if len(getattr(self, field)) != n_blocks:
                raise errors.ParameterRangeError(field, getattr(self, field), f"exactly {n_blocks} entries")
        for k in self.down_kernels + self.up_kernels + (self.skip_kernel,):
            if k < 1 or k % 2 == 0:
                raise errors.ParameterRangeError('kernel size', k, "odd and >= 1")
        if min(self.down_channels) < 1:
            raise errors.ParameterRangeError('down_channels', self.down_channels, "all >= 1")
        if min(self.down_strides + self.up_strides) < 1:
            raise errors.ParameterRangeError('strides', (self.down_strides, self.up_strides), "all >= 1")
        if self.up_strides != self.down_strides[::-1]:
            raise errors.ParameterRangeError('up_strides', self.up_strides, f"mirror of down_strides {self.down_strides[::-1]}")
        if self.out_channels != 4:
            raise errors.ParameterRangeError('out_channels', self.out_channels, "4 (quality, cos, sin, width)")
        if self.input_size < 1:
            raise errors.ParameterRangeError('input_size', self.input_size, ">= 1")

    @property
    def up_channels(self) -> typing.Tuple[int, ...]:
        """Decoder block i emits as many channels as the encoder activation it is
        merged with (the first encoder block's width for the last decoder block).
        """
        return tuple(self.down_channels[max(n_blocks - 2 - i, 0)] for i in range(n_blocks))

    def encoder_sizes(self) -> typing.List[int]:
        """Spatial edge of each encoder block's output."""
        sizes, s = list(), self.input_size
        for stride in self.down_strides:
            s = (s - 1) // stride + 1
            sizes.append(s)
        return sizes

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: typing.Dict[str, typing.Any]) -> 'GraspFCNConfig':
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise errors.FormatError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


FULL_PRESET = GraspFCNConfig(input_size=400, down_channels=(16, 32, 64, 128, 128, 128), name='paper')
DESK_PRESET = GraspFCNConfig()


def tiny_config() -> GraspFCNConfig:
    """Smallest useful network, for gradient checks."""
    return GraspFCNConfig(input_size=16, down_channels=(2, 2, 2, 2, 2, 2), name='tiny')


presets = {'paper': FULL_PRESET, 'desk': DESK_PRESET, 'tiny': tiny_config()}


class GraspFCN(object):
    """A built network. Create with build() or load(); call forward() then, for
    training, backward() with the gradients of the loss w.r.t. the four planes.
    """
    def __init__(self, config: GraspFCNConfig) -> None:
        self.config = config
        cfg = config
        self.encoder = list()
        in_c = 1
        for j in range(n_blocks):
            out_c = cfg.down_channels[j]
            self.encoder.append((te.Conv2d(f"enc{j}.conv", in_c, out_c, cfg.down_kernels[j], cfg.down_strides[j]),
                                 te.BatchNorm2d(f"enc{j}.bn", out_c),
                                 te.ReLU(f"enc{j}.relu")))
            in_c = out_c

        sizes = cfg.encoder_sizes()
        targets = [sizes[n_blocks - 2 - i] if i < n_blocks - 1 else cfg.input_size for i in range(n_blocks)]
        self.decoder, self.skips = list(), list()
        current = sizes[-1]
        for i in range(n_blocks):
            out_c, k, s = cfg.up_channels[i], cfg.up_kernels[i], cfg.up_strides[i]
            output_padding = targets[i] - te.conv_transpose_output_size(current, k, s, (k - 1) // 2)
            if not 0 <= output_padding < s:
                raise errors.ParameterRangeError(f"dec{i} output_padding", output_padding,
                                                 f"[0, {s}) to reach {targets[i]} px from {current} px")
            self.decoder.append((te.ConvTranspose2d(f"dec{i}.convt", in_c, out_c, k, s, output_padding=output_padding),
                                 te.BatchNorm2d(f"dec{i}.bn", out_c),
                                 te.ReLU(f"dec{i}.relu")))
            source_c = cfg.down_channels[n_blocks - 2 - i] if i < n_blocks - 1 else 1
            self.skips.append(te.Conv2d(f"skip{i}", source_c, out_c, cfg.skip_kernel))
            in_c, current = out_c, targets[i]
        self.final = te.Conv2d('final', in_c, cfg.out_channels, final_kernel)
        self._heads = None

    @property
    def use_skips(self) -> bool:
        return self.config.use_skips

    def conv_layers(self) -> typing.List[te.Conv2d]:
        """Every (transposed) convolution, in build order."""
        return [blk[0] for blk in self.encoder] + [blk[0] for blk in self.decoder] + self.skips + [self.final]

    def batchnorm_layers(self) -> typing.List[te.BatchNorm2d]:
        return [blk[1] for blk in self.encoder] + [blk[1] for blk in self.decoder]

    def _ordered_layers(self) -> typing.List[typing.Any]:
        return [layer for blk in self.encoder + self.decoder for layer in blk] + self.skips + [self.final]

    def parameters(self) -> typing.List[te.Parameter]:
        """Trainable parameters in build order."""
        return [p for layer in self._ordered_layers() for p in layer.parameters()]

    def state_arrays(self) -> typing.List[typing.Tuple[str, np.ndarray]]:
        """Everything the weight file stores, in build order: each layer's parameters,
        followed for batch-norm layers by the running mean and variance.
        """
        ret = list()
        for layer in self._ordered_layers():
            ret.extend((p.name, p.value) for p in layer.parameters())
            if isinstance(layer, te.BatchNorm2d):
                ret.append((layer.spec.name + '.running_mean', layer.running_mean))
                ret.append((layer.spec.name + '.running_var', layer.running_var))
        return ret

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def parameter_count(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def serialized_size(self) -> int:
        """Size in bytes of save(self), without building the byte stream."""
        config_bytes = len(json.dumps(self.config.to_dict(), sort_keys=True).encode('utf-8'))
        return len(weight_magic) + 8 + config_bytes + 4 * sum(a.size for _, a in self.state_arrays()) + checksum_size

    def layer_specs(self) -> typing.List[te.LayerSpec]:
        """Declarative description of the whole network, in evaluation order."""
        ret = list()
        for blk in self.encoder:
            ret.extend(layer.spec for layer in blk)
        for i, blk in enumerate(self.decoder):
            ret.extend(layer.spec for layer in blk)
            if self.use_skips:
                ret.append(self.skips[i].spec)
                ret.append(te.LayerSpec('Add', in_channels=blk[0].spec.out_channels,
                                        out_channels=blk[0].spec.out_channels, name=f"dec{i}.add"))
        ret.append(self.final.spec)
        ret.append(te.LayerSpec('Sigmoid', in_channels=1, out_channels=1, name='head.quality'))
        ret.append(te.LayerSpec('Tanh', in_channels=2, out_channels=2, name='head.angle'))
        ret.append(te.LayerSpec('Sigmoid', in_channels=1, out_channels=1, name='head.width'))
        return ret

    @property
    def dtype(self) -> np.dtype:
        return self.final.weight.value.dtype

    def forward(self, batch: te.Tensor,
                mode: str = te.EVAL) -> typing.Tuple[te.Tensor, te.Tensor, te.Tensor, te.Tensor]:
        """Run BATCH (N x 1 x input_size x input_size) through the network. Returns the
        quality, cos, sin and width planes, each N x 1 x input_size x input_size.
        """
        size = self.config.input_size
        if batch.ndim != 4 or batch.shape[1:] != (1, size, size):
            raise errors.ShapeMismatchError('GraspFCN.forward', 'input', f"N x 1 x {size} x {size}", batch.shape)
        if not np.all(np.isfinite(batch)):
            raise errors.NumericalError('GraspFCN.forward input', 'non-finite input value')
        x = batch.astype(self.dtype, copy=False)
        activations = list()                        # encoder outputs
        for conv, bn, relu in self.encoder:
            x = relu.forward(bn.forward(conv.forward(x), mode))
            activations.append(x)
        for i, (convt, bn, relu) in enumerate(self.decoder):
            x = relu.forward(bn.forward(convt.forward(x), mode))
            if self.use_skips:
                source = activations[n_blocks - 2 - i] if i < n_blocks - 1 else batch.astype(self.dtype, copy=False)
                x = te.add(x, self.skips[i].forward(source))
            console.debug_print(f"dec{i}: {x.shape}", 4)
        raw = self.final.forward(x)
        q = te.sigmoid(raw[:, 0:1])
        cos = te.tanh(raw[:, 1:2])
        sin = te.tanh(raw[:, 2:3])
        w = te.sigmoid(raw[:, 3:4])
        self._heads = (q, cos, sin, w)
        return q, cos, sin, w

    def backward(self, grad_q: te.Tensor,
                 grad_cos: te.Tensor,
                 grad_sin: te.Tensor,
                 grad_w: te.Tensor) -> None:
        """Reverse pass after forward(): accumulate into every parameter's grad the
        derivative of the loss whose gradients w.r.t. the four output planes are
        given.
        """
        assert self._heads is not None, "ERROR! GraspFCN.backward() called before forward()!"
        q, cos, sin, w = self._heads
        g = np.concatenate([te.sigmoid_backward(grad_q, q), te.tanh_backward(grad_cos, cos),
                            te.tanh_backward(grad_sin, sin), te.sigmoid_backward(grad_w, w)], axis=1)
        g = self.final.backward(g)
        skip_grads = [None] * n_blocks              # gradients arriving at encoder outputs
        for i in reversed(range(n_blocks)):
            convt, bn, relu = self.decoder[i]
            if self.use_skips:
                g_skip = self.skips[i].backward(g)
                if i < n_blocks - 1:
                    skip_grads[n_blocks - 2 - i] = g_skip
            g = convt.backward(bn.backward(relu.backward(g)))
        for j in reversed(range(n_blocks)):
            if skip_grads[j] is not None:
                g = g + skip_grads[j]
            conv, bn, relu = self.encoder[j]
            g = conv.backward(bn.backward(relu.backward(g)))


def build(config: GraspFCNConfig,
          seed: int = 0) -> GraspFCN:
    """A fresh network for CONFIG. Convolution weights are He-initialized from SEED
    in build order; biases and batch-norm shifts start at 0, batch-norm scales at 1.
    """
    net = GraspFCN(config)
    rng = np.random.default_rng(seed)
    for layer in net.conv_layers():
        layer.weight.value[...] = te.he_normal(rng, layer.weight.value.shape, layer.fan_in)
    console.debug_print(f"built {config.name} network: {net.parameter_count()} parameters, seed {seed}", 3)
    return net


def save(net: GraspFCN) -> bytes:
    """Serialize NET (config, parameters, running statistics) to bytes."""
    config_bytes = json.dumps(net.config.to_dict(), sort_keys=True).encode('utf-8')
    chunks = [weight_magic, struct.pack('<II', weight_format_version, len(config_bytes)), config_bytes]
    chunks.extend(np.ascontiguousarray(a, dtype='<f4').tobytes() for _, a in net.state_arrays())
    body = b''.join(chunks)
    return body + hashlib.blake2b(body, digest_size=checksum_size).digest()


def load(data: bytes) -> GraspFCN:
    """Rebuild a network from bytes produced by save()."""
    header = len(weight_magic) + 8
    if len(data) < header + checksum_size or data[:len(weight_magic)] != weight_magic:
        if data[:len(weight_magic)] == weight_magic[:len(data)]:
            raise errors.ChecksumError("weight stream is truncated")
        raise errors.FormatError("not a grasp-map weight stream (bad magic)")
    body, checksum = data[:-checksum_size], data[-checksum_size:]
    if hashlib.blake2b(body, digest_size=checksum_size).digest() != checksum:
        raise errors.ChecksumError("weight stream checksum mismatch (corrupt or truncated)")
    version, config_len = struct.unpack('<II', body[len(weight_magic):header])
    if version != weight_format_version:
        raise errors.FormatVersionError(f"weight format version {version}; this build reads version {weight_format_version}")
    try:
        config = GraspFCNConfig.from_dict(json.loads(body[header:header + config_len].decode('utf-8')))
    except (ValueError, TypeError) as errr:
        raise errors.FormatError(f"bad config block in weight stream ({errr})")
    net = GraspFCN(config)
    pos = header + config_len
    for name, arr in net.state_arrays():
        n = arr.size * 4
        if pos + n > len(body):
            raise errors.FormatError(f"weight stream ends inside {name}")
        arr[...] = np.frombuffer(body, dtype='<f4', count=arr.size, offset=pos).reshape(arr.shape)
        pos += n
    if pos != len(body):
        raise errors.FormatError(f"{len(body) - pos} unexpected trailing bytes in weight stream")
    return net


def save_file(net: GraspFCN,
              path: typing.Union[str, Path]) -> None:
    Path(path).write_bytes(save(net))
    console.debug_print(f"wrote weights to {path}", 2)


def load_file(path: typing.Union[str, Path]) -> GraspFCN:
    data = Path(path).read_bytes()
    try:
        return load(data)
    except errors.FormatError as errr:
        errr.path = str(path)
        errr.args = (f"{path}: {errr}",)
        raise
