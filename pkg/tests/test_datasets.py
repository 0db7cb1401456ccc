import numpy as np
import pytest

from ducatlab.attacks import AttackSpec
from ducatlab.core import predict_classes
from ducatlab.datasets import Dataset, DatasetFormatError, gen_gaussians, gen_rings, load_csv, save_csv
from ducatlab.train import PGD_AT, TrainConfig, train


def _linear_probe_accuracy(train_set, test_set, steps=2000, lr=0.5):
    """Softmax regression fit by plain batch gradient descent in numpy (independent of the library)."""
    x = np.hstack([train_set.features, np.ones((len(train_set), 1))])
    y = np.eye(train_set.num_classes)[train_set.labels]
    w = np.zeros((x.shape[1], train_set.num_classes))
    for _ in range(steps):
        z = x @ w
        p = np.exp(z - z.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        w -= lr * x.T @ (p - y) / len(x)
    xt = np.hstack([test_set.features, np.ones((len(test_set), 1))])
    return np.mean(np.argmax(xt @ w, 1) == test_set.labels)


def test_gaussians_zero_noise_sit_on_centers():
    ds = gen_gaussians(3, 2, 20, 1.0, 0.0, seed=4)
    centers = np.asarray(ds.meta["centers"])
    np.testing.assert_allclose(ds.features, centers[ds.labels], atol=1e-15)


def test_gaussians_center_separation():
    ds = gen_gaussians(6, 3, 5, 2.0, 0.1, seed=1, rescale=False)
    c = np.asarray(ds.meta["centers"])
    dist = np.linalg.norm(c[:, None] - c[None], axis=-1)
    assert dist[np.triu_indices(6, 1)].min() >= 2.0


def test_generators_are_deterministic():
    a, b = gen_gaussians(4, 2, 30, 1.0, 0.3, seed=7), gen_gaussians(4, 2, 30, 1.0, 0.3, seed=7)
    assert a.features.tobytes() == b.features.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    r1, r2 = gen_rings(40, seed=3), gen_rings(40, seed=3)
    assert r1.features.tobytes() == r2.features.tobytes()
    assert gen_gaussians(4, 2, 30, 1.0, 0.3, seed=8).features.tobytes() != a.features.tobytes()


def test_splits_differ_but_share_centers():
    tr, te = gen_gaussians(4, 2, 30, 1.0, 0.3, seed=7), gen_gaussians(4, 2, 30, 1.0, 0.3, seed=7, split="test")
    assert tr.meta["centers"] == te.meta["centers"]
    assert not np.any(np.all(tr.features[:, None] == te.features[None], axis=-1))


def test_class_balance_and_range():
    ds = gen_gaussians(5, 2, 37, 1.0, 0.4, seed=0)
    np.testing.assert_array_equal(ds.class_counts(), [37] * 5)
    assert ds.features.min() >= 0 and ds.features.max() <= 1
    rings = gen_rings(90, (1.0, 2.0, 3.0), 0.05, seed=0)
    np.testing.assert_array_equal(rings.class_counts(), [90] * 3)
    assert rings.features.min() >= 0 and rings.features.max() <= 1


def test_infeasible_separation_is_reported():
    from ducatlab.datasets import _place_centers

    # one placement attempt per center: with 200 centers some candidate lands too close
    with pytest.raises(ValueError, match="could not place"):
        _place_centers(np.random.default_rng(0), 200, 2, 1.0, max_tries=1)


def test_separated_gaussians_are_linearly_separable():
    kw = dict(num_classes=4, d=2, per_class_n=200, separation=1.0, noise_sigma=0.08, seed=2)
    acc = _linear_probe_accuracy(gen_gaussians(**kw), gen_gaussians(**kw, split="test"))
    assert acc > 0.99


def test_rings_zero_noise_on_circles():
    ds = gen_rings(50, (1.0, 2.0), 0.0, seed=1)
    r = np.linalg.norm(ds.features - np.asarray(ds.meta["center"]), axis=1)
    np.testing.assert_allclose(r, np.asarray(ds.meta["scaled_radii"])[ds.labels], rtol=1e-12)


def test_rings_reject_overlap():
    with pytest.raises(ValueError, match="overlap"):
        gen_rings(10, (1.0, 1.5), 0.1)
    with pytest.raises(ValueError):
        gen_rings(10, (2.0, 1.0), 0.01)


def test_rings_defeat_linear_probe():
    acc = _linear_probe_accuracy(gen_rings(500, seed=0), gen_rings(500, seed=0, split="test"))
    assert 0.4 <= acc <= 0.6


def test_rings_mlp_fits():
    tr, te = gen_rings(500, seed=0), gen_rings(500, seed=0, split="test")
    identity = AttackSpec(epsilon=0.0, steps=0, random_start=False)
    cfg = TrainConfig(method=PGD_AT, epochs=30, train_attack=identity, lr_decay_epochs=(25,), batch_size=32,
                      hidden=(32, 32), seed=0)
    model, _ = train(cfg, tr)
    assert np.mean(predict_classes(model, te.features) == te.labels) > 0.95


def test_csv_round_trip(tmp_path):
    ds = gen_gaussians(3, 4, 25, 1.0, 0.3, seed=5)
    save_csv(ds, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", num_classes=3)
    assert back.features.tobytes() == ds.features.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "label,f0,f1,f2,f3"


def test_csv_label_out_of_range_names_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("label,f0,f1\n0,0.1,0.2\n7,0.3,0.4\n")
    with pytest.raises(DatasetFormatError, match=r"bad\.csv:3"):
        load_csv(p, num_classes=4)


def test_csv_malformed_rows(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("label,f0,f1\n0,0.1\n")
    with pytest.raises(DatasetFormatError, match=":2"):
        load_csv(p)
    p.write_text("label,f0,f1\n0,abc,0.2\n")
    with pytest.raises(DatasetFormatError, match=":2"):
        load_csv(p)
    p.write_text("x,y\n0,1\n")
    with pytest.raises(DatasetFormatError, match="header"):
        load_csv(p)


def test_csv_header_only_is_empty_dataset_error(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("label,f0,f1\n")
    with pytest.raises(DatasetFormatError, match="empty"):
        load_csv(p)


def test_dataset_label_invariant():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 3]), 3)
