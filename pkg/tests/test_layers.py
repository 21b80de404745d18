import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cases import LAYER_CASES
from gradcheck import grad_check
from seqchain import autodiff as ad
from seqchain import layers
from seqchain.autodiff import Tape, Tensor
from seqchain.errors import ConfigError, ShapeError
from test_autodiff import naive_conv1d, naive_overlap_add


def zero_lstm(din, H):
    return layers.LSTMParams(
        Wx=Tensor(np.zeros((din, 4 * H))),
        Wh=Tensor(np.zeros((H, 4 * H))),
        b=Tensor(np.zeros(4 * H)),
    )


def test_lstm_zero_everything_stays_zero():
    p = zero_lstm(3, 4)
    h, c = layers.lstm_step(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), p)
    assert np.allclose(h.data, 0.0)
    assert np.allclose(c.data, 0.0)


def test_lstm_saturated_forget_gate_preserves_cell():
    H = 4
    p = zero_lstm(3, H)
    b = np.zeros(4 * H)
    b[H : 2 * H] = 100.0
    p.b = Tensor(b)
    c0 = np.random.default_rng(0).normal(size=(2, H))
    h, c = layers.lstm_step(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, H))), Tensor(c0), p)
    assert np.max(np.abs(c.data - c0)) < 1e-6


def test_lstm_matches_direct_gate_formulas():
    rng = np.random.default_rng(42)
    din, H, rows = 3, 5, 2
    p = layers.init_lstm(rng, din, H)
    x = rng.normal(size=(rows, din))
    h0 = rng.normal(size=(rows, H))
    c0 = rng.normal(size=(rows, H))
    h, c = layers.lstm_step(Tensor(x), Tensor(h0), Tensor(c0), p)

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    gates = x @ p.Wx.data + h0 @ p.Wh.data + p.b.data
    i, f, g, o = (gates[:, k * H : (k + 1) * H] for k in range(4))
    c_want = sig(f) * c0 + sig(i) * np.tanh(g)
    h_want = sig(o) * np.tanh(c_want)
    assert np.allclose(c.data, c_want, atol=1e-12)
    assert np.allclose(h.data, h_want, atol=1e-12)


def test_lstm_forget_bias_initialized_to_one():
    p = layers.init_lstm(np.random.default_rng(0), 4, 6)
    assert np.allclose(p.b.data[6:12], 1.0)
    assert np.allclose(p.b.data[:6], 0.0)
    assert np.allclose(p.b.data[12:], 0.0)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_lstm_hidden_is_bounded(seed):
    rng = np.random.default_rng(seed)
    p = layers.init_lstm(rng, 3, 4)
    h, _ = layers.lstm_step(
        Tensor(rng.normal(size=(2, 3)) * 5),
        Tensor(rng.normal(size=(2, 4)) * 5),
        Tensor(rng.normal(size=(2, 4)) * 5),
        p,
    )
    assert np.all(np.abs(h.data) <= 1.0)


def test_lstm_dimension_mismatch():
    p = zero_lstm(3, 4)
    with pytest.raises(ShapeError):
        layers.lstm_step(Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), p)


def test_encoder_frame_count():
    rng = np.random.default_rng(1)
    enc = layers.Conv1dParams(kernels=Tensor(rng.normal(size=(20, 8))), stride=10)
    out = layers.waveform_encoder(Tensor(rng.normal(size=100)), enc)
    assert out.shape == (9, 8)


def test_encoder_zero_wave_gives_zero_features():
    rng = np.random.default_rng(2)
    enc = layers.Conv1dParams(kernels=Tensor(rng.normal(size=(16, 8))), stride=8)
    out = layers.waveform_encoder(Tensor(np.zeros(80)), enc)
    assert np.allclose(out.data, 0.0)


def test_encoder_matches_windowed_oracle():
    rng = np.random.default_rng(3)
    wave = rng.normal(size=64)
    k = rng.normal(size=(16, 4))
    enc = layers.Conv1dParams(kernels=Tensor(k), stride=8)
    got = layers.waveform_encoder(Tensor(wave), enc).data
    assert np.allclose(got, naive_conv1d(wave, k, stride=8), atol=1e-12)


def test_encoder_is_linear():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=48), rng.normal(size=48)
    enc = layers.Conv1dParams(kernels=Tensor(rng.normal(size=(16, 6))), stride=8)
    lhs = layers.waveform_encoder(Tensor(a + b), enc).data
    rhs = layers.waveform_encoder(Tensor(a), enc).data + layers.waveform_encoder(Tensor(b), enc).data
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_encoder_rejects_short_wave():
    enc = layers.Conv1dParams(kernels=Tensor(np.zeros((16, 4))), stride=8)
    with pytest.raises(ShapeError):
        layers.waveform_encoder(Tensor(np.zeros(10)), enc)


def test_decoder_shape_and_zeros():
    rng = np.random.default_rng(5)
    dec = layers.ConvTranspose1dParams(kernels=Tensor(rng.normal(size=(20, 8))), stride=10)
    out = layers.waveform_decoder(Tensor(np.zeros((9, 8))), dec)
    assert out.shape == (100,)
    assert np.allclose(out.data, 0.0)


def test_decoder_matches_overlap_add_oracle():
    rng = np.random.default_rng(6)
    hidden = rng.normal(size=(7, 5))
    k = rng.normal(size=(12, 5))
    dec = layers.ConvTranspose1dParams(kernels=Tensor(k), stride=6)
    got = layers.waveform_decoder(Tensor(hidden), dec).data
    assert np.allclose(got, naive_overlap_add(hidden, k, stride=6), atol=1e-12)


def test_decoder_is_linear():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    dec = layers.ConvTranspose1dParams(kernels=Tensor(rng.normal(size=(8, 4))), stride=4)
    lhs = layers.waveform_decoder(Tensor(a + b), dec).data
    rhs = layers.waveform_decoder(Tensor(a), dec).data + layers.waveform_decoder(Tensor(b), dec).data
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_encode_decode_round_trip_length():
    cfg = layers.preset_config("desk")
    rng = np.random.default_rng(8)
    enc = layers.Conv1dParams(kernels=Tensor(rng.normal(size=(cfg.kernel, cfg.basis))), stride=cfg.stride)
    dec = layers.ConvTranspose1dParams(kernels=Tensor(rng.normal(size=(cfg.kernel, cfg.basis))), stride=cfg.stride)
    wave = Tensor(rng.normal(size=800))
    feats = layers.waveform_encoder(wave, enc)
    recon = layers.waveform_decoder(feats, dec)
    assert recon.shape == (800,)


def test_embed_one_hot_table_returns_indicators():
    emb = layers.Embedding(table=Tensor(np.eye(4)))
    out = layers.embed_tokens([2, 0, 2], emb)
    assert np.allclose(out.data, [[0, 0, 1, 0], [1, 0, 0, 0], [0, 0, 1, 0]])


def test_embed_repeated_ids_share_rows():
    rng = np.random.default_rng(9)
    emb = layers.Embedding(table=Tensor(rng.normal(size=(5, 3))))
    out = layers.embed_tokens([1, 1, 1], emb).data
    assert np.allclose(out[0], out[1])
    assert np.allclose(out[1], out[2])


def test_embed_rejects_out_of_range():
    emb = layers.Embedding(table=Tensor(np.eye(3)))
    with pytest.raises(ShapeError):
        layers.embed_tokens([3], emb)


def test_separator_preserves_frame_count():
    rng = np.random.default_rng(10)
    p = layers.init_separator(rng, basis=4, channels=6, blocks=2, layers=3, kernel=3)
    for T in (1, 2, 9, 30):
        out = layers.separator(Tensor(rng.normal(size=(T, 4))), p)
        assert out.shape == (T, 6)


def test_separator_zero_params_give_constant_output():
    p = layers.init_separator(np.random.default_rng(0), 3, 4, 1, 2, 3)
    for t in layers.parameters(p):
        t.data[...] = 0.0
    out = layers.separator(Tensor(np.random.default_rng(1).normal(size=(7, 3))), p).data
    assert np.allclose(out, out[0])


def test_separator_rejects_even_kernel():
    with pytest.raises(ConfigError):
        layers.init_separator(np.random.default_rng(0), 4, 4, 1, 1, kernel=4)


def test_init_bounds_follow_fan_in():
    rng = np.random.default_rng(11)
    lin = layers.init_linear(rng, 16, 300)
    bound = 1.0 / 4.0
    assert np.max(np.abs(lin.W.data)) <= bound
    assert np.max(np.abs(lin.b.data)) <= bound
    conv = layers.init_conv1d(rng, 4, 4, 300)
    assert np.max(np.abs(conv.kernels.data)) <= 0.25


def test_named_parameters_walks_nested_structures():
    rng = np.random.default_rng(12)
    p = layers.init_separator(rng, 3, 4, 1, 2, 3)
    names = layers.named_parameters(p, "sep")
    assert "sep.in_proj.kernels" in names
    assert "sep.convs.0.kernels" in names
    assert "sep.alphas.1" in names
    assert all(isinstance(v, Tensor) for v in names.values())
    assert len(layers.parameters(p)) == len(names)


def test_preset_paper_tasnet_records_published_sizes():
    cfg = layers.preset_config("paper-tasnet")
    assert cfg.basis == 256
    assert cfg.kernel == 20
    assert cfg.sep_channels == 256
    assert cfg.chain_hidden == 512
    assert cfg.sep_kernel == 3
    assert cfg.sep_layers == 8
    assert cfg.sep_blocks == 4


def test_preset_validation():
    with pytest.raises(ConfigError):
        layers.preset_config("desk", stride=20, kernel=16)
    with pytest.raises(ConfigError):
        layers.preset_config("nope")
    with pytest.raises(ConfigError):
        layers.ModelConfig(basis=0)


def test_frames_for_matches_encoder():
    cfg = layers.preset_config("desk")
    assert cfg.frames_for(800) == (800 - 16) // 8 + 1
    with pytest.raises(ShapeError):
        cfg.frames_for(8)


@pytest.mark.parametrize("name", sorted(LAYER_CASES))
def test_layer_gradients_match_fd(name):
    rng = np.random.default_rng(hash(name) % (2**32))
    for _ in range(4):
        build, arrays = LAYER_CASES[name](rng)
        grad_check(build, arrays)
