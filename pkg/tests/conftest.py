import numpy as np
import pytest

from ducatlab import tensor as T


def numeric_grad(f, arr, h=1e-6):
    """Central finite differences of the scalar function ``f`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        fp = f()
        arr[i] = orig - h
        fm = f()
        arr[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


@pytest.fixture(autouse=True)
def _float64_debug():
    T.set_default_dtype(np.float64)
    with T.debug_mode(True):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def gauss4():
    from ducatlab.datasets import gen_gaussians

    return (gen_gaussians(4, 2, 150, 1.0, 0.3, seed=0, split="train"),
            gen_gaussians(4, 2, 150, 1.0, 0.3, seed=0, split="test"))


@pytest.fixture(scope="session")
def erm_model(gauss4):
    """Small MLP fit without adversary (steps=0 identity attack): clean-accurate, easy to attack."""
    from ducatlab.attacks import AttackSpec
    from ducatlab.train import PGD_AT, TrainConfig, train

    identity = AttackSpec(epsilon=0.0, steps=0, random_start=False)
    cfg = TrainConfig(method=PGD_AT, epochs=15, train_attack=identity, lr_decay_epochs=(12,), batch_size=32,
                      hidden=(32,), seed=0)
    model, _ = train(cfg, gauss4[0])
    return model


@pytest.fixture(scope="session")
def zoo(gauss4):
    """Four quickly trained defenses on the same data: two PGD-AT seeds, DUCAT, hard-label DUCAT."""
    from ducatlab.attacks import AttackSpec
    from ducatlab.core import DucatHyper
    from ducatlab.train import DUCAT, DUCAT_HARD_TOY, PGD_AT, TrainConfig, train

    spec = AttackSpec(epsilon=16 / 255, step_size=4 / 255, steps=5)
    models = []
    for method, seed in ((PGD_AT, 0), (PGD_AT, 1), (DUCAT, 0), (DUCAT_HARD_TOY, 0)):
        cfg = TrainConfig(method=method, epochs=8, hyper=DucatHyper(start_epoch=4), train_attack=spec,
                          lr_decay_epochs=(6,), batch_size=32, hidden=(32,), seed=seed)
        models.append(train(cfg, gauss4[0])[1].final_model)
    return models


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
