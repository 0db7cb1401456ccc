import numpy as np
import pytest
from scipy import stats

from ducatlab import tensor as T
from ducatlab.attacks import (
    L2, LINF, ORIGINAL_HEAD, TARGETED_DUMMY, TARGETED_ORIGINAL, AttackSpec, attack, fgsm, pgd, sample_targets,
    targeted_pgd,
)
from ducatlab.core import predict_classes
from ducatlab.nn import InitSpec, MlpModel, build_mlp, double_last_layer, forward
from ducatlab.tensor import Tensor


def _logistic(w, b):
    """Two-logit linear model whose class-1 probability is sigmoid(w.x + b)."""
    d = len(w)
    weight = np.vstack([np.zeros(d), np.asarray(w, float)])
    return MlpModel([d, 2], [Tensor(weight, requires_grad=True)], [Tensor(np.array([0.0, b]), requires_grad=True)],
                    num_classes=2)


def _per_sample_ce(model, x, y):
    return T.cross_entropy(forward(model.frozen(), x), T.one_hot(y, model.output_dim), reduction="none").data


def test_zero_budget_is_identity(rng):
    m = build_mlp(3, (6,), 3, InitSpec(seed=1))
    x = rng.uniform(size=(20, 3))
    y = rng.integers(0, 3, 20)
    spec = AttackSpec(epsilon=0.0, steps=1, step_size=0.1, random_start=False)
    np.testing.assert_array_equal(fgsm(m, x, y, spec).x_adv, x)
    np.testing.assert_array_equal(pgd(m, x, y, spec.with_(steps=5, random_start=True)).x_adv, x)


def test_fgsm_sign_matches_logistic_gradient(rng):
    w = np.array([1.5, -2.0, 0.7, 0.0001])
    b = -0.2
    m = _logistic(w, b)
    x = rng.uniform(0.3, 0.7, size=(50, 4))
    y = rng.integers(0, 2, 50)
    eps = 0.05
    out = fgsm(m, x, y, AttackSpec(epsilon=eps, steps=1, step_size=eps, random_start=False, clip=None))
    p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
    analytic = (p - y)[:, None] * w[None, :]
    np.testing.assert_array_equal(np.sign(out.x_adv - x), np.sign(analytic))
    assert np.allclose(np.abs(out.x_adv - x), eps)


@pytest.mark.parametrize("norm", [LINF, L2])
def test_outputs_stay_in_ball_and_range(rng, norm):
    m = build_mlp(5, (8,), 3, InitSpec(seed=2))
    x = rng.uniform(size=(1000, 5))
    y = rng.integers(0, 3, 1000)
    eps = 0.1
    spec = AttackSpec(norm=norm, epsilon=eps, step_size=0.05, steps=1, random_start=False)
    for out in (fgsm(m, x, y, spec), pgd(m, x, y, spec.with_(steps=7, random_start=True, restarts=3, seed=4))):
        assert np.all(out.perturbation_norms <= eps + 1e-9)
        assert out.x_adv.min() >= 0.0 and out.x_adv.max() <= 1.0
        delta = out.x_adv - x
        ref = np.abs(delta).max(1) if norm == LINF else np.linalg.norm(delta, axis=1)
        np.testing.assert_allclose(out.perturbation_norms, ref, rtol=0, atol=1e-15)


@pytest.mark.parametrize("norm", [LINF, L2])
def test_single_step_pgd_is_fgsm_bitwise(rng, norm):
    m = build_mlp(4, (10, 6), 3, InitSpec(seed=3))
    x = rng.uniform(size=(64, 4))
    y = rng.integers(0, 3, 64)
    spec = AttackSpec(norm=norm, epsilon=16 / 255, step_size=16 / 255, steps=1, random_start=False)
    a, b = fgsm(m, x, y, spec), pgd(m, x, y, spec)
    assert a.x_adv.tobytes() == b.x_adv.tobytes()
    np.testing.assert_array_equal(a.success_mask, b.success_mask)


def test_fgsm_requires_one_step():
    with pytest.raises(ValueError):
        fgsm(build_mlp(2, (3,), 2), np.zeros((1, 2)), [0], AttackSpec(steps=2))


def test_dimension_mismatch():
    with pytest.raises(T.ShapeError):
        pgd(build_mlp(3, (4,), 2), np.zeros((2, 4)), [0, 1], AttackSpec())


def test_linear_model_beyond_margin_always_flips(rng):
    w = np.array([2.0, -1.0, 0.5])
    b = 0.1
    m = _logistic(w, b)
    x = rng.normal(size=(200, 3))
    y = ((x @ w + b) > 0).astype(int)
    # L-inf distance to the decision boundary of a linear score is |w.x + b| / ||w||_1
    margin = np.abs(x @ w + b) / np.abs(w).sum()
    eps = margin.max() * 1.01
    out = pgd(m, x, y, AttackSpec(epsilon=eps, step_size=eps / 4, steps=10, random_start=False, clip=None))
    assert out.success_mask.all()
    # a budget just under each margin can never succeed
    small = pgd(m, x, y, AttackSpec(epsilon=margin.min() * 0.99, step_size=eps / 4, steps=10, clip=None))
    assert not small.success_mask.any()


def test_restart_keeps_max_loss_candidate(rng):
    m = build_mlp(3, (12,), 3, InitSpec(seed=5))
    x = rng.uniform(size=(80, 3))
    y = rng.integers(0, 3, 80)
    spec = AttackSpec(epsilon=0.1, step_size=0.02, steps=3, restarts=4)
    # replaying one restart at a time against a shared stream yields the individual candidates
    stream = np.random.default_rng(9)
    candidates = [pgd(m, x, y, spec.with_(restarts=1), rng=stream).x_adv for _ in range(4)]
    losses = np.stack([_per_sample_ce(m, c, y) for c in candidates])
    kept = pgd(m, x, y, spec, rng=np.random.default_rng(9)).x_adv
    kept_loss = _per_sample_ce(m, kept, y)
    assert np.all(kept_loss >= losses.max(axis=0))
    first_best = np.argmax(losses, axis=0)  # argmax returns the first maximiser: earlier restarts win ties
    np.testing.assert_array_equal(kept, np.stack(candidates)[first_best, np.arange(80)])


def test_pgd_is_seeded(rng):
    m = build_mlp(3, (6,), 2, InitSpec(seed=6))
    x, y = rng.uniform(size=(30, 3)), rng.integers(0, 2, 30)
    spec = AttackSpec(seed=11, restarts=2)
    assert pgd(m, x, y, spec).x_adv.tobytes() == pgd(m, x, y, spec).x_adv.tobytes()
    assert pgd(m, x, y, spec).x_adv.tobytes() != pgd(m, x, y, spec.with_(seed=12)).x_adv.tobytes()


def test_success_judged_on_projected_class():
    m = double_last_layer(build_mlp(2, (4,), 2, InitSpec(seed=0)))
    for p in m.parameters():
        p.data[...] = 0.0
    m.biases[-1].data[2 + m.perm[1]] = 5.0  # everything lands in class 1's dummy slot
    x = np.full((3, 2), 0.5)
    out = attack(m, x, [1, 1, 0], AttackSpec(epsilon=0.0, steps=0, random_start=False))
    np.testing.assert_array_equal(out.success_mask, [False, False, True])


def test_targeted_zero_budget_never_succeeds(erm_model, gauss4):
    test = gauss4[1]
    correct = predict_classes(erm_model, test.features) == test.labels
    x, y = test.features[correct], test.labels[correct]
    spec = AttackSpec(epsilon=0.0, step_size=0.01, steps=5, target_mode=TARGETED_ORIGINAL)
    targets = sample_targets(y, 4, TARGETED_ORIGINAL, seed=0)
    assert not targeted_pgd(erm_model, x, y, targets, spec).success_mask.any()


def test_two_class_targeted_coincides_with_untargeted(rng):
    m = build_mlp(3, (8,), 2, InitSpec(seed=7))
    x = rng.uniform(size=(100, 3))
    y = rng.integers(0, 2, 100)
    spec = AttackSpec(epsilon=0.1, step_size=0.03, steps=5, random_start=False)
    untargeted = pgd(m, x, y, spec)
    targeted = targeted_pgd(m, x, y, 1 - y, spec.with_(target_mode=TARGETED_ORIGINAL))
    np.testing.assert_allclose(targeted.x_adv, untargeted.x_adv, atol=1e-12)
    np.testing.assert_array_equal(targeted.success_mask, untargeted.success_mask)


def test_targeted_weaker_than_untargeted(erm_model, gauss4):
    test = gauss4[1]
    x, y = test.features, test.labels
    for seed in range(3):
        spec = AttackSpec(epsilon=16 / 255, step_size=4 / 255, steps=10, seed=seed)
        untargeted = pgd(erm_model, x, y, spec).success_mask.mean()
        targets = sample_targets(y, 4, TARGETED_ORIGINAL, seed=seed)
        targeted = targeted_pgd(erm_model, x, y, targets, spec.with_(target_mode=TARGETED_ORIGINAL))
        assert targeted.success_mask.mean() <= untargeted


def test_targeted_validation(rng):
    m = build_mlp(2, (4,), 3, InitSpec(seed=0))
    x, y = rng.uniform(size=(2, 2)), np.array([0, 1])
    spec = AttackSpec(target_mode=TARGETED_ORIGINAL)
    with pytest.raises(ValueError):
        targeted_pgd(m, x, y, [0, 2], spec)  # first target equals true label
    with pytest.raises(ValueError):
        targeted_pgd(m, x, y, [1, 2], AttackSpec())  # untargeted spec
    with pytest.raises(ValueError):
        targeted_pgd(m, x, y, [4, 5], spec.with_(target_mode=TARGETED_DUMMY))  # standard head
    d = double_last_layer(m)
    with pytest.raises(ValueError):
        targeted_pgd(d, x, y, [3 + d.perm[0], 4], spec.with_(target_mode=TARGETED_DUMMY))


def test_dummy_targets_move_towards_dummy_slots(rng):
    m = double_last_layer(build_mlp(2, (16,), 3, InitSpec(seed=8)))
    x = rng.uniform(size=(60, 2))
    y = rng.integers(0, 3, 60)
    targets = sample_targets(y, 3, TARGETED_DUMMY, seed=1, perm=m.perm)
    out = targeted_pgd(m, x, y, targets, AttackSpec(epsilon=0.2, step_size=0.05, steps=10,
                                                    target_mode=TARGETED_DUMMY, random_start=False))
    before = _per_sample_ce(m, x, targets)
    after = _per_sample_ce(m, out.x_adv, targets)
    assert np.mean(after < before) > 0.9


def test_sample_targets_forced_and_exclusions():
    y = np.zeros(50, dtype=int)
    np.testing.assert_array_equal(sample_targets(y, 2, TARGETED_ORIGINAL, seed=3), np.ones(50))
    perm = np.array([2, 0, 3, 1])
    ys = np.arange(4).repeat(500)
    t = sample_targets(ys, 4, TARGETED_DUMMY, seed=0, perm=perm)
    assert np.all((t >= 4) & (t < 8))
    assert not np.any(t == 4 + perm[ys])
    with pytest.raises(ValueError):
        sample_targets(y, 1, TARGETED_ORIGINAL)


def test_sample_targets_uniform_chi_square():
    y = np.full(100_000, 3)
    t = sample_targets(y, 10, TARGETED_ORIGINAL, seed=2024)
    assert not np.any(t == 3)
    counts = np.bincount(t, minlength=10)
    observed = np.delete(counts, 3)
    _, p = stats.chisquare(observed)
    assert p > 1e-3


def test_success_non_decreasing_in_budget(erm_model, gauss4):
    test = gauss4[1]
    assert len(test) >= 500
    rates = []
    for e in (2, 4, 8, 16, 32):
        eps = e / 255
        out = pgd(erm_model, test.features, test.labels, AttackSpec(epsilon=eps, step_size=eps / 4, steps=20, seed=0))
        rates.append(out.success_mask.mean())
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] > rates[0]


def test_original_head_loss_ignores_dummy_logits(rng):
    base = build_mlp(2, (6,), 2, InitSpec(seed=9))
    d = double_last_layer(base)
    x, y = rng.uniform(size=(20, 2)), rng.integers(0, 2, 20)
    spec = AttackSpec(epsilon=0.1, step_size=0.03, steps=4, random_start=False, loss_head=ORIGINAL_HEAD)
    # first C logits are unchanged by doubling, so the original-head attack is identical
    assert pgd(d, x, y, spec).x_adv.tobytes() == pgd(base, x, y, spec).x_adv.tobytes()


def test_identity_adversary_via_dispatcher(rng):
    m = build_mlp(2, (4,), 2)
    x = rng.uniform(size=(5, 2))
    out = attack(m, x, [0, 1, 0, 1, 0], AttackSpec(steps=0, random_start=False))
    np.testing.assert_array_equal(out.x_adv, x)
    assert np.all(out.perturbation_norms == 0)
