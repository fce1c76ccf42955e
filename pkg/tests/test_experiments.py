import gzip

import numpy as np
import pytest

from kkm.data import MNIST_FILES, load_mnist, write_idx
from kkm.errors import InputError
from kkm.experiments import (MNIST_ENV, mnist_from_env, physical_memory, require_memory, score_kkm, score_sgd,
                             toy_diagnostics)
from kkm.kernels import KernelSpec


def fake_mnist(root, n_train=90, n_test=30, classes=3, gz=False):
    """Images whose class decides which horizontal band is lit."""
    rng = np.random.default_rng(0)
    for split, n in (("train", n_train), ("test", n_test)):
        y = np.arange(n) % classes
        imgs = rng.integers(0, 40, size=(n, 28, 28)).astype(np.uint8)
        for i, c in enumerate(y):
            imgs[i, 8 * c:8 * c + 8] = 220
        ip, lp = (root / f for f in MNIST_FILES[split])
        write_idx(ip, imgs)
        write_idx(lp, y.astype(np.uint8))
        if gz:
            for p in (ip, lp):
                p.with_name(p.name + ".gz").write_bytes(gzip.compress(p.read_bytes()))
                p.unlink()


@pytest.mark.parametrize("gz", [False, True])
def test_load_mnist(tmp_path, gz):
    fake_mnist(tmp_path, gz=gz)
    train, test = load_mnist(tmp_path)
    assert train.samples.shape == (90, 784) and test.samples.shape == (30, 784)
    assert train.labels[:4].tolist() == [0, 1, 2, 0]


def test_load_mnist_missing(tmp_path):
    with pytest.raises(InputError):
        load_mnist(tmp_path)


def test_mnist_from_env(tmp_path, monkeypatch):
    monkeypatch.delenv(MNIST_ENV, raising=False)
    with pytest.raises(InputError, match=MNIST_ENV):
        mnist_from_env()
    fake_mnist(tmp_path)
    monkeypatch.setenv(MNIST_ENV, str(tmp_path))
    assert mnist_from_env()[0].N == 90


def test_require_memory():
    require_memory(1000, 1, 1, 10)
    if physical_memory():
        with pytest.raises(InputError):
            require_memory(10**7, 1, 1, 10)


def test_scores_on_separable_fake(tmp_path):
    fake_mnist(tmp_path)
    train, test = load_mnist(tmp_path)
    k = score_kkm(train, test, 3, 2, seeds=range(2), restarts=2)
    assert k.mean() == (100.0, pytest.approx(1.0))
    assert len(k.seconds) == 2 and k.std()[0] == 0.0
    s = score_sgd(train, test, 3, seeds=range(2), batch_size=30)
    assert 0 <= s.mean()[0] <= 100 and len(s.accuracy) == 2


def test_score_kkm_custom_kernel(tmp_path):
    fake_mnist(tmp_path)
    train, test = load_mnist(tmp_path)
    sc = score_kkm(train, test, 3, 1, seeds=[0], restarts=1, kernel=KernelSpec("linear"))
    assert 0 <= sc.accuracy[0] <= 100


def test_toy_diagnostics_small():
    diag = toy_diagnostics(per_cluster=60, B=3, seed=1, std=0.05)
    assert set(diag) == {"stride", "block"}
    for d in diag.values():
        assert len(d.displacement) == 2 and len(d.iterations) == 3
        assert d.max_displacement >= 0
    assert diag["stride"].accuracy == 1.0
