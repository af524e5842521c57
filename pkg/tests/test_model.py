#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Tests for mod.model: network construction and shapes, the output heads, an
end-to-end gradient check, and the weight file format.
"""


import dataclasses
import hashlib
import struct

import numpy as np
import pytest

from numpy.testing import assert_array_equal

from mod import errors
from mod import grasp_core as gc
from mod import model
from mod import tensor_engine as te


def depth_batch(rng, n, size):
    return rng.uniform(-0.5, 0.5, (n, 1, size, size)).astype(np.float32)


class TestConfig:
    def test_presets(self):
        assert model.DESK_PRESET.input_size == 96
        assert model.FULL_PRESET.input_size == 400
        assert model.DESK_PRESET.down_kernels == (9, 5, 3, 3, 3, 3)
        assert model.DESK_PRESET.up_kernels == (3, 3, 3, 5, 9, 5)
        assert set(model.presets) == {'paper', 'desk', 'tiny'}

    def test_stride_mirror_is_enforced(self):
        with pytest.raises(errors.ParameterRangeError):
            model.GraspFCNConfig(up_strides=(2, 1, 1, 1, 2, 2))

    def test_even_kernel(self):
        with pytest.raises(errors.ParameterRangeError):
            model.GraspFCNConfig(down_kernels=(9, 5, 3, 3, 3, 4))

    def test_wrong_block_count(self):
        with pytest.raises(errors.ParameterRangeError):
            model.GraspFCNConfig(down_channels=(8, 16, 16, 32, 32))

    def test_dict_round_trip(self):
        d = model.FULL_PRESET.to_dict()
        assert model.GraspFCNConfig.from_dict(d) == model.FULL_PRESET
        d['dropout'] = 0.5
        with pytest.raises(errors.FormatError):
            model.GraspFCNConfig.from_dict(d)

    def test_up_channels_mirror_encoder(self):
        assert model.DESK_PRESET.up_channels == (32, 32, 16, 16, 8, 8)


class TestForward:
    def test_desk_shapes(self, rng):
        net = model.build(model.DESK_PRESET, seed=0)
        outputs = net.forward(depth_batch(rng, 1, 96))
        assert len(outputs) == 4
        assert all(o.shape == (1, 1, 96, 96) for o in outputs)

    @pytest.mark.slow
    def test_full_preset_shapes(self, rng):
        net = model.build(model.FULL_PRESET, seed=0)
        q, cos, sin, w = net.forward(depth_batch(rng, 1, 400))
        assert q.shape == w.shape == (1, 1, 400, 400)

    @pytest.mark.parametrize("size", [16, 17, 23, 31, 40])
    def test_output_size_equals_input_size(self, rng, size):
        cfg = dataclasses.replace(model.tiny_config(), input_size=size)
        outputs = model.build(cfg).forward(depth_batch(rng, 2, size))
        assert all(o.shape == (2, 1, size, size) for o in outputs)

    def test_same_seed_same_parameters(self):
        a, b = model.build(model.DESK_PRESET, seed=5), model.build(model.DESK_PRESET, seed=5)
        for p, q in zip(a.parameters(), b.parameters()):
            assert p.name == q.name
            assert_array_equal(p.value, q.value)
        c = model.build(model.DESK_PRESET, seed=6)
        assert not np.array_equal(a.encoder[0][0].weight.value, c.encoder[0][0].weight.value)

    def test_zero_final_layer(self, rng):
        net = model.build(model.tiny_config(), seed=1)
        net.final.weight.value[...] = 0
        q, cos, sin, w = net.forward(depth_batch(rng, 2, 16))
        assert np.all(q == 0.5) and np.all(w == 0.5)
        assert np.all(cos == 0) and np.all(sin == 0)

    def test_eval_is_repeatable(self, rng):
        net = model.build(model.tiny_config(), seed=1)
        x = depth_batch(rng, 3, 16)
        net.forward(x, te.TRAIN)
        first = net.forward(x, te.EVAL)
        second = net.forward(x, te.EVAL)
        for a, b in zip(first, second):
            assert_array_equal(a, b)

    def test_head_ranges(self, rng):
        net = model.build(model.tiny_config(), seed=2)
        q, cos, sin, w = net.forward(depth_batch(rng, 4, 16) * 50)
        for plane in (q, cos, sin, w):
            assert np.all(np.isfinite(plane))
        assert np.all((q >= 0) & (q <= 1)) and np.all((w >= 0) & (w <= 1))
        assert np.all(np.abs(cos) <= 1) and np.all(np.abs(sin) <= 1)

    def test_wrong_input_size(self, rng):
        net = model.build(model.tiny_config())
        with pytest.raises(errors.ShapeMismatchError):
            net.forward(depth_batch(rng, 1, 15))
        with pytest.raises(errors.ShapeMismatchError):
            net.forward(np.zeros((1, 2, 16, 16), dtype=np.float32))

    def test_non_finite_input(self):
        x = np.zeros((1, 1, 16, 16), dtype=np.float32)
        x[0, 0, 3, 3] = np.nan
        with pytest.raises(errors.NumericalError):
            model.build(model.tiny_config()).forward(x)

    def test_skips_are_live(self, rng):
        with_skips = model.build(model.tiny_config(), seed=4)
        without = model.build(dataclasses.replace(model.tiny_config(), use_skips=False), seed=4)
        x = depth_batch(rng, 2, 16)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(with_skips.forward(x), without.forward(x)))
        assert diff > 0

    def test_layer_specs(self):
        net = model.build(model.DESK_PRESET)
        specs = net.layer_specs()
        assert specs[0].kind == 'Conv' and specs[0].kernel_size == 9 and specs[0].stride == 2
        assert sum(s.kind == 'Add' for s in specs) == 6
        assert sum(s.kind == 'ConvTranspose' for s in specs) == 6
        assert [s.kind for s in specs[-3:]] == ['Sigmoid', 'Tanh', 'Sigmoid']
        no_skips = model.build(dataclasses.replace(model.DESK_PRESET, use_skips=False)).layer_specs()
        assert not any(s.kind == 'Add' for s in no_skips)


class TestGradients:
    def loss(self, net, x, targets, weights):
        net.zero_grad()
        outputs = net.forward(x, te.TRAIN)
        value, grads = te.weighted_mse_loss(*outputs, *targets, weights)
        net.backward(*grads)
        return value

    def test_end_to_end_finite_differences(self, f64, rng):
        net = model.build(model.tiny_config(), seed=8)
        for bn in net.batchnorm_layers():
            bn.gamma.value[...] = rng.uniform(0.5, 1.5, bn.gamma.value.shape)
            bn.beta.value[...] = rng.uniform(-0.2, 0.2, bn.beta.value.shape)
        x = rng.uniform(-0.5, 0.5, (2, 1, 16, 16))
        maps = [gc.rasterize_rects([gc.GraspRectangle(8, 8, 0.4, 6, 9)], 16, 16, 24.0),
                gc.rasterize_rects([gc.GraspRectangle(6, 9, -1.0, 6, 12)], 16, 16, 24.0)]
        targets = [np.stack([m.planes()[i] for m in maps])[:, None] for i in range(4)]
        weights = gc.LossWeights()
        self.loss(net, x, targets, weights)
        eps = 1e-6
        for p in net.parameters():
            analytic = p.grad.copy()
            flat = p.value.reshape(-1)
            picks = rng.choice(flat.size, size=min(4, flat.size), replace=False)
            numeric = np.zeros(len(picks))
            for n, i in enumerate(picks):
                original = flat[i]
                flat[i] = original + eps
                plus = te.weighted_mse_loss(*net.forward(x, te.TRAIN), *targets, weights)[0]
                flat[i] = original - eps
                minus = te.weighted_mse_loss(*net.forward(x, te.TRAIN), *targets, weights)[0]
                flat[i] = original
                numeric[n] = (plus - minus) / (2 * eps)
            picked = analytic.reshape(-1)[picks]
            if p.name in self.cancelled_by_batchnorm(net):
                assert np.max(np.abs(picked)) < 1e-8 and np.max(np.abs(numeric)) < 1e-6, p.name
            else:
                assert (te.max_relative_error(picked, numeric) < 1e-4
                        or np.max(np.abs(picked - numeric)) < 1e-8), p.name

    @staticmethod
    def cancelled_by_batchnorm(net):
        """Biases of convolutions feeding a training-mode batch norm: the batch mean
        absorbs them, so their gradient is zero.
        """
        return {blk[0].bias.name for blk in net.encoder + net.decoder}

    def test_gradients_reach_every_parameter(self, f64, rng):
        net = model.build(model.tiny_config(), seed=9)
        x = rng.uniform(-0.5, 0.5, (2, 1, 16, 16))
        targets = [rng.uniform(0, 1, (2, 1, 16, 16)) for _ in range(4)]
        self.loss(net, x, targets, gc.LossWeights())
        for p in net.parameters():
            assert np.all(np.isfinite(p.grad))
            if p.name not in self.cancelled_by_batchnorm(net):
                assert np.any(p.grad != 0), p.name


class TestWeightFile:
    def trained_a_little(self, rng):
        net = model.build(model.tiny_config(), seed=3)
        net.forward(depth_batch(rng, 2, 16), te.TRAIN)
        return net

    def test_round_trip(self, rng):
        net = self.trained_a_little(rng)
        data = model.save(net)
        back = model.load(data)
        assert back.config == net.config
        assert back.parameter_count() == net.parameter_count()
        for (name_a, a), (name_b, b) in zip(net.state_arrays(), back.state_arrays()):
            assert name_a == name_b
            assert_array_equal(a, b)
        x = depth_batch(rng, 2, 16)
        for a, b in zip(net.forward(x), back.forward(x)):
            assert_array_equal(a, b)
        assert model.save(back) == data

    def test_serialized_size(self, rng):
        net = self.trained_a_little(rng)
        assert net.serialized_size() == len(model.save(net))
        assert model.GraspFCN(model.FULL_PRESET).serialized_size() > 1_000_000

    def test_truncated_stream(self, rng):
        data = model.save(self.trained_a_little(rng))
        with pytest.raises(errors.ChecksumError):
            model.load(data[:-10])
        with pytest.raises(errors.ChecksumError):
            model.load(data[:5])

    def test_corrupted_byte(self, rng):
        data = bytearray(model.save(self.trained_a_little(rng)))
        data[len(data) // 2] ^= 0x40
        with pytest.raises(errors.ChecksumError):
            model.load(bytes(data))

    def test_bad_magic(self):
        with pytest.raises(errors.FormatError) as info:
            model.load(b"\x89PNG\r\n\x1a\n" + bytes(64))
        assert not isinstance(info.value, errors.ChecksumError)

    def test_version_mismatch(self, rng):
        body = model.save(self.trained_a_little(rng))[:-model.checksum_size]
        body = body[:len(model.weight_magic)] + struct.pack('<I', 2) + body[len(model.weight_magic) + 4:]
        data = body + hashlib.blake2b(body, digest_size=model.checksum_size).digest()
        with pytest.raises(errors.FormatVersionError):
            model.load(data)

    def test_file_errors_name_the_path(self, tmp_path, rng):
        path = tmp_path / 'net.gfcn'
        model.save_file(self.trained_a_little(rng), path)
        assert model.load_file(path).config == model.tiny_config()
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(errors.ChecksumError) as info:
            model.load_file(path)
        assert str(path) in str(info.value)
