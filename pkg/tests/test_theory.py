import numpy as np
import pytest

from mtbandits.kernels import KernelSpec
from mtbandits.similarity import identity_similarity, uniform_similarity
from mtbandits.theory import check_monotonicity, log_g, rank_bound_check

GAUSS = KernelSpec("gaussian", lengthscale=0.5)
LINEAR = KernelSpec("linear")


def round_robin_tasks(n, tasks):
    return np.arange(n) % tasks


def random_low_rank_similarity(rng, tasks, rank):
    """Normalized Gram of nonnegative factors: unit diagonal, entries in (0, 1]."""
    W = np.abs(rng.standard_normal((tasks, rank))) + 0.1
    K = W @ W.T
    d = 1.0 / np.sqrt(np.diag(K))
    return K * np.outer(d, d)


def test_log_g_single_unit_context():
    # one context with unit self-kernel and lam = 1: g = (1 + 1) / 1 = 2
    v = log_g([0], np.array([[0.3, 0.4]]), identity_similarity(1), GAUSS, lam=1.0)
    assert v == pytest.approx(np.log(2.0), abs=1e-8)


def test_log_g_zero_kernel():
    # linear kernel on zero vectors: the Gram matrix vanishes and g = 1
    X = np.zeros((4, 2))
    v = log_g(round_robin_tasks(4, 2), X, identity_similarity(2), LINEAR, lam=0.7)
    assert v == pytest.approx(0.0, abs=1e-10)


def test_log_g_empty_history_rejected():
    with pytest.raises(ValueError):
        log_g([], np.empty((0, 2)), identity_similarity(1), GAUSS)


def test_log_g_nonnegative_and_additive_monotone():
    rng = np.random.default_rng(0)
    sim = uniform_similarity(3, 0.5)
    X = rng.standard_normal((12, 2))
    tasks = round_robin_tasks(12, 3)
    prev = 0.0
    for n in range(1, 13):
        v = log_g(tasks[:n], X[:n], sim, GAUSS, lam=1.0)
        assert v >= prev - 1e-10  # appending a context never shrinks log g
        prev = v
    assert prev > 0.0


def test_rank_bound_holds_on_random_instances():
    rng = np.random.default_rng(1)
    T = 20
    for trial in range(50):
        rank = int(rng.integers(1, 4))
        sim = random_low_rank_similarity(rng, 3, rank)
        X = rng.standard_normal((T + 1, 2))
        tasks = round_robin_tasks(T + 1, 3)
        out = rank_bound_check(tasks, X, sim, LINEAR, lam=1.0)
        assert out["satisfied"], out
        assert out["rank_similarity"] <= rank
        assert out["rank_context_gram"] <= 2


def test_monotonicity_coarse_grid():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((9, 2))
    tasks = round_robin_tasks(9, 3)
    report = check_monotonicity([0.0, 0.5, 1.0], tasks, X, GAUSS, lam=1.0)
    assert report.monotone
    vals = report.log_g_values
    assert vals[0] >= vals[1] >= vals[2]
    assert vals[0] == max(vals)  # mu = 0 maximizes g over the grid


def test_monotonicity_equal_mu_equal_g():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((6, 2))
    tasks = round_robin_tasks(6, 2)
    a = log_g(tasks, X, uniform_similarity(2, 0.4), GAUSS, lam=1.0)
    b = log_g(tasks, X, uniform_similarity(2, 0.4), GAUSS, lam=1.0)
    assert a == b


def test_monotonicity_grid_validation():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((4, 2))
    tasks = round_robin_tasks(4, 2)
    with pytest.raises(ValueError):
        check_monotonicity([0.5, 0.2], tasks, X, GAUSS)
    with pytest.raises(ValueError):
        check_monotonicity([0.0, 1.5], tasks, X, GAUSS)


def test_report_serialization(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.standard_normal((6, 2))
    tasks = round_robin_tasks(6, 3)
    report = check_monotonicity([0.0, 0.3, 0.9], tasks, X, GAUSS)
    path = tmp_path / "report.json"
    report.to_json(path)
    import json

    back = json.loads(path.read_text())
    assert back["monotone"] is True
    assert len(back["log_g_values"]) == 3
