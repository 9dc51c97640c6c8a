import numpy as np
import pytest

from ppn.bev import BevConfig, BevMap, stack_sequence
from ppn.errors import ConfigError, FormatError, ShapeError
from ppn.losses import mse
from ppn.networks import (
    ConvLayer,
    Network,
    NetworkConfig,
    build_network,
    forward,
    load_model,
    render_rgb,
    save_model,
    segment_sequence,
)
from ppn.tensor import Tensor, grad_check


def seq_of(frames, size=16):
    cfg = BevConfig(resolution=0.5, width=size, height=size, depth_size=4)
    return stack_sequence([BevMap(f.astype(np.uint8), cfg) for f in frames])


def expected_param_count(t_in, base, depth, out_channels, skips):
    """Independent layer-by-layer arithmetic."""
    total = (t_in * base + base)  # stem 1x1
    ch = base
    for _ in range(depth):
        nxt = ch * 2
        total += ch * nxt * 9 + nxt        # conv1
        total += 2 * nxt                   # bn1 gamma/beta
        total += nxt * nxt * 9 + nxt       # conv2
        total += 2 * nxt                   # bn2
        ch = nxt
    for _ in range(depth):
        half = ch // 2
        total += ch * half * 4 + half      # transposed conv 2x2
        conv_in = half + (ch if skips else 0)
        total += conv_in * half * 9 + half
        total += 2 * half
        total += half * half * 9 + half
        total += 2 * half
        ch = half
    total += ch * out_channels + out_channels  # head 1x1
    return total


class TestBuild:
    def test_parameter_count_closed_form(self):
        net = build_network(NetworkConfig(t_in=16, base_channels=16, depth=3))
        assert net.parameter_count == expected_param_count(16, 16, 3, 1, True)

    def test_parameter_count_no_skips(self):
        net = build_network(NetworkConfig(t_in=16, base_channels=16, depth=3,
                                          skips=False))
        assert net.parameter_count == expected_param_count(16, 16, 3, 1, False)

    def test_skip_ablation_encoder_identical_decoder_differs(self):
        a = build_network(NetworkConfig(t_in=8, base_channels=8, depth=2), seed=5)
        b = build_network(NetworkConfig(t_in=8, base_channels=8, depth=2,
                                        skips=False), seed=5)
        np.testing.assert_array_equal(a.stem.weights.data, b.stem.weights.data)
        for blk_a, blk_b in zip(a.encoder, b.encoder):
            for la, lb in zip(blk_a, blk_b):
                if isinstance(la, ConvLayer):
                    np.testing.assert_array_equal(la.weights.data, lb.weights.data)
        for dec_a, dec_b in zip(a.decoder, b.decoder):
            up_a, conv_a = dec_a[0], dec_a[1]
            up_b, conv_b = dec_b[0], dec_b[1]
            assert up_a.weights.shape == up_b.weights.shape
            # first decoder conv input channels differ by the concatenated taps
            half = up_a.spec.out_channels
            tap = up_a.spec.in_channels
            assert conv_a.weights.shape[1] == half + tap
            assert conv_b.weights.shape[1] == half

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            NetworkConfig(t_in=0)
        with pytest.raises(ConfigError):
            NetworkConfig(output_activation="softmax")

    def test_spatial_divisibility(self):
        cfg = NetworkConfig(depth=3)
        cfg.check_spatial(64, 64)
        with pytest.raises(ConfigError):
            cfg.check_spatial(60, 60)


class TestForward:
    @pytest.mark.parametrize("depth,size", [(1, 16), (2, 16), (3, 32)])
    def test_shape_preservation(self, depth, size):
        net = build_network(NetworkConfig(t_in=4, base_channels=4, depth=depth))
        x = Tensor(np.random.default_rng(0).random((4, size, size)))
        out = forward(net, x)
        assert out.shape == (1, size, size)

    def test_sigmoid_codomain(self):
        net = build_network(NetworkConfig(t_in=4, base_channels=4, depth=2))
        out = forward(net, Tensor(np.random.default_rng(1).random((4, 16, 16))))
        assert (out.data > 0).all() and (out.data < 1).all()

    def test_tanh_codomain(self):
        net = build_network(NetworkConfig(t_in=4, base_channels=4, depth=2,
                                          output_activation="tanh"))
        out = forward(net, Tensor(np.random.default_rng(1).random((4, 16, 16))))
        assert (out.data > -1).all() and (out.data < 1).all()

    def test_zero_input_zero_head_gives_half(self):
        net = build_network(NetworkConfig(t_in=4, base_channels=4, depth=1))
        net.head.weights.data[:] = 0.0
        net.head.bias.data[:] = 0.0
        out = forward(net, Tensor(np.zeros((4, 16, 16))))
        np.testing.assert_allclose(out.data, 0.5)

    def test_determinism_same_seed(self):
        x = np.random.default_rng(2).random((4, 16, 16))
        outs = []
        for _ in range(2):
            net = build_network(NetworkConfig(t_in=4, base_channels=4, depth=2), seed=3)
            outs.append(forward(net, Tensor(x)).data)
        assert (outs[0] == outs[1]).all()

    def test_wrong_channels(self):
        net = build_network(NetworkConfig(t_in=4, base_channels=4, depth=1))
        with pytest.raises(ShapeError):
            forward(net, Tensor(np.zeros((3, 16, 16))))

    def test_indivisible_spatial(self):
        net = build_network(NetworkConfig(t_in=4, base_channels=4, depth=2))
        with pytest.raises(ConfigError):
            forward(net, Tensor(np.zeros((4, 18, 18))))


class TestGradientFlow:
    @pytest.mark.parametrize("skips", [True, False])
    def test_grad_check_through_network_and_loss(self, skips):
        target = np.full((1, 16, 16), 0.4)

        def loss_fn(x):
            net = build_network(NetworkConfig(t_in=2, base_channels=4, depth=2,
                                              skips=skips), seed=11, dtype=np.float64)
            net.set_mode("training")
            return mse(forward(net, x), target)

        rng = np.random.default_rng(12)
        point = Tensor(rng.uniform(0.1, 0.9, (2, 16, 16))
                       * rng.choice([-1.0, 1.0], (2, 16, 16)))
        assert grad_check(loss_fn, point, 1e-5) <= 1e-3


class TestSegmentSequence:
    def test_identical_frames_permutation_identity(self):
        net = build_network(NetworkConfig(t_in=4, base_channels=4, depth=2))
        frame = (np.random.default_rng(4).random((16, 16)) > 0.5)
        seq = seq_of([frame] * 4)
        a = segment_sequence(net, seq).data
        b = segment_sequence(net, seq).data
        assert (a == b).all()

    def test_not_constant_in_input(self):
        net = build_network(NetworkConfig(t_in=4, base_channels=4, depth=2), seed=13)
        zeros = seq_of([np.zeros((16, 16))] * 4)
        ones = seq_of([np.ones((16, 16))] * 4)
        assert not np.array_equal(segment_sequence(net, zeros).data,
                                  segment_sequence(net, ones).data)

    def test_length_mismatch(self):
        net = build_network(NetworkConfig(t_in=16, base_channels=4, depth=2))
        with pytest.raises(ShapeError):
            segment_sequence(net, seq_of([np.zeros((16, 16))] * 8))


class TestRenderRgb:
    def net3(self):
        return build_network(NetworkConfig(t_in=2, base_channels=4, depth=2,
                                           out_channels=3, output_activation="tanh"),
                             seed=21)

    def test_endpoint_bytes(self):
        # -1 -> 0, 0 -> 128 (round half up), +1 -> 255
        v = np.array([-1.0, 0.0, 1.0])
        b = np.floor((v + 1.0) / 2.0 * 255.0 + 0.5)
        np.testing.assert_array_equal(b, [0, 128, 255])

    def test_image_shape_and_determinism(self):
        net3 = self.net3()
        frame = (np.random.default_rng(5).random((16, 16)) > 0.5)
        pair = seq_of([frame, np.roll(frame, 3, axis=0)])
        img1 = render_rgb(net3, pair)
        img2 = render_rgb(net3, pair)
        assert img1.shape == (16, 16, 3)
        assert img1.dtype == np.uint8
        np.testing.assert_array_equal(img1, img2)

    def test_displaced_object_changes_pixels(self):
        net3 = self.net3()
        frame = np.zeros((16, 16))
        frame[2:5, 2:5] = 1.0
        moved = np.roll(frame, 6, axis=1)
        img_a = render_rgb(net3, seq_of([frame, frame]))
        img_b = render_rgb(net3, seq_of([frame, moved]))
        assert not np.array_equal(img_a, img_b)

    def test_wrong_pair_length(self):
        with pytest.raises(ShapeError):
            render_rgb(self.net3(), seq_of([np.zeros((16, 16))] * 3))

    def test_wrong_head(self):
        net = build_network(NetworkConfig(t_in=2, base_channels=4, depth=2))
        with pytest.raises(ShapeError):
            render_rgb(net, seq_of([np.zeros((16, 16))] * 2))


class TestSerialization:
    @pytest.mark.parametrize("cfg", [
        NetworkConfig(t_in=4, base_channels=4, depth=1),
        NetworkConfig(t_in=8, base_channels=8, depth=2, skips=False),
        NetworkConfig(t_in=2, base_channels=4, depth=2, out_channels=3,
                      output_activation="tanh"),
    ])
    def test_roundtrip_bit_identical(self, tmp_path, cfg):
        net = build_network(cfg, seed=31, dtype=np.float32)
        net.set_mode("inference")
        x = Tensor(np.random.default_rng(6).random(
            (cfg.t_in, 16, 16)).astype(np.float32))
        before = forward(net, x).data
        path = tmp_path / "model.ppn"
        save_model(net, path)
        loaded = load_model(path)
        loaded.set_mode("inference")
        after = forward(loaded, x).data
        assert loaded.config == cfg
        assert (before == after).all()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppn"
        p.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            load_model(p)

    def test_truncated(self, tmp_path):
        net = build_network(NetworkConfig(t_in=2, base_channels=4, depth=1))
        p = tmp_path / "model.ppn"
        save_model(net, p)
        blob = p.read_bytes()
        p.write_bytes(blob[:-10])
        with pytest.raises(FormatError, match="truncated"):
            load_model(p)

    def test_trailing_bytes(self, tmp_path):
        net = build_network(NetworkConfig(t_in=2, base_channels=4, depth=1))
        p = tmp_path / "model.ppn"
        save_model(net, p)
        p.write_bytes(p.read_bytes() + b"\x00\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_model(p)
