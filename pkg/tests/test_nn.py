import struct

import numpy as np
import pytest

from ducatlab import tensor as T
from ducatlab.nn import (
    BadMagicError, InitSpec, MlpModel, TruncatedCheckpointError, UnsupportedVersionError, build_mlp,
    double_last_layer, forward, load_checkpoint, logits_np, save_checkpoint,
)
from ducatlab.tensor import Tensor


def _zero_model(d=3, hidden=(4,), c=2):
    m = build_mlp(d, hidden, c)
    for p in m.parameters():
        p.data[...] = 0.0
    return m


def test_zero_weights_give_zero_logits(rng):
    m = _zero_model()
    np.testing.assert_array_equal(forward(m, rng.normal(size=(5, 3))).data, np.zeros((5, 2)))


def test_single_linear_layer_hand_set():
    w = np.array([[1.0, -2.0], [0.5, 3.0], [0.0, 1.0]])
    b = np.array([0.1, 0.2, -0.3])
    m = MlpModel([2, 3], [Tensor(w, requires_grad=True)], [Tensor(b, requires_grad=True)], num_classes=3)
    x = np.array([[2.0, 1.0]])
    np.testing.assert_allclose(forward(m, x).data, (w @ x[0] + b)[None], rtol=1e-15)


def test_forward_matches_straight_line_reimplementation(rng):
    m = build_mlp(2, (16,), 4, InitSpec(seed=3))
    x = rng.normal(size=(7, 2))
    w1, b1 = m.weights[0].data, m.biases[0].data
    w2, b2 = m.weights[1].data, m.biases[1].data
    expected = np.empty((7, 4))
    for i in range(7):
        h = [max(0.0, sum(w1[j, k] * x[i, k] for k in range(2)) + b1[j]) for j in range(16)]
        for o in range(4):
            expected[i, o] = sum(w2[o, j] * h[j] for j in range(16)) + b2[o]
    np.testing.assert_allclose(forward(m, x).data, expected, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(logits_np(m, x), expected, rtol=1e-12, atol=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(T.ShapeError):
        forward(build_mlp(3, (4,), 2), np.zeros((2, 5)))


def test_parameter_count():
    m = build_mlp(2, (16, 8), 4)
    assert m.num_parameters() == (2 * 16 + 16) + (16 * 8 + 8) + (8 * 4 + 4)


def test_seeded_init_is_deterministic():
    a, b = build_mlp(2, (8,), 3, InitSpec(seed=5)), build_mlp(2, (8,), 3, InitSpec(seed=5))
    for p, q in zip(a.parameters(), b.parameters()):
        assert p.data.tobytes() == q.data.tobytes()
    c = build_mlp(2, (8,), 3, InitSpec(seed=6))
    assert a.weights[0].data.tobytes() != c.weights[0].data.tobytes()


def test_init_is_scaled_uniform():
    m = build_mlp(100, (50,), 2, InitSpec(seed=0))
    assert np.abs(m.weights[0].data).max() <= 1 / np.sqrt(100)
    assert np.abs(m.weights[1].data).max() <= 1 / np.sqrt(50)


@pytest.mark.parametrize("dummy_init", ["fresh", "copy_noise"])
def test_double_last_layer_preserves_original_rows(rng, dummy_init):
    m = build_mlp(2, (6,), 2, InitSpec(seed=1, dummy_row_init=dummy_init))
    d = double_last_layer(m)
    assert d.head_mode == "ducat" and d.output_dim == 4
    assert d.weights[-1].data[:2].tobytes() == m.weights[-1].data.tobytes()
    assert d.biases[-1].data[:2].tobytes() == m.biases[-1].data.tobytes()
    assert d.num_parameters() - m.num_parameters() == 6 * 2 + 2
    x = rng.normal(size=(50, 2))
    assert logits_np(d, x)[:, :2].tobytes() == logits_np(m, x).tobytes()
    assert forward(d, x).data[:, :2].tobytes() == forward(m, x).data.tobytes()


def test_copy_noise_follows_permutation():
    m = build_mlp(2, (5,), 3, InitSpec(seed=2, dummy_row_init="copy_noise", noise=0.0), perm=[2, 0, 1])
    d = double_last_layer(m)
    w = d.weights[-1].data
    for k in range(3):
        np.testing.assert_array_equal(w[3 + m.perm[k]], w[k])


def test_double_twice_fails():
    with pytest.raises(ValueError):
        double_last_layer(double_last_layer(build_mlp(2, (4,), 2)))


def test_ducat_head_width_invariant():
    m = build_mlp(2, (4,), 3)
    with pytest.raises(ValueError):
        MlpModel(m.widths, m.weights, m.biases, 3, head_mode="ducat")


def test_checkpoint_round_trip(tmp_path):
    m = double_last_layer(build_mlp(3, (5, 4), 3, InitSpec(seed=9)), InitSpec(seed=9)).copy()
    m.perm = np.array([1, 2, 0])
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    r = load_checkpoint(path)
    assert r.widths == m.widths and r.num_classes == 3 and r.head_mode == "ducat"
    np.testing.assert_array_equal(r.perm, m.perm)
    for p, q in zip(m.parameters(), r.parameters()):
        assert p.data.tobytes() == q.data.tobytes()
    assert r.init == m.init


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(build_mlp(2, (3,), 2), path)
    raw = path.read_bytes()

    (tmp_path / "magic.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(BadMagicError, match="bad magic"):
        load_checkpoint(tmp_path / "magic.ckpt")

    (tmp_path / "ver.ckpt").write_bytes(raw[:8] + struct.pack("<I", 999) + raw[12:])
    with pytest.raises(UnsupportedVersionError, match="unsupported version"):
        load_checkpoint(tmp_path / "ver.ckpt")

    (tmp_path / "short.ckpt").write_bytes(raw[:-5])
    with pytest.raises(TruncatedCheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.ckpt")
