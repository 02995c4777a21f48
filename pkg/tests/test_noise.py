import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fftrust.exceptions import ContractError, DataError
from fftrust.noise import (
    DEFAULT_ADJACENCY,
    STAGES,
    asymmetric_matrix,
    build_matrix,
    inject,
    symmetric_matrix,
)

N1, N2, N3, W, REM = (STAGES.index(s) for s in ("N1", "N2", "N3", "W", "REM"))


def test_symmetric_no_noise_is_identity():
    assert np.array_equal(symmetric_matrix(5, 0.0).t, np.eye(5))


def test_symmetric_point_two():
    t = symmetric_matrix(5, 0.2).t
    assert np.allclose(np.diag(t), 0.8, atol=1e-15)
    assert np.allclose(t[~np.eye(5, dtype=bool)], 0.05, atol=1e-15)


def test_symmetric_binary():
    assert np.allclose(symmetric_matrix(2, 0.6).t, [[0.4, 0.6], [0.6, 0.4]], atol=1e-15)


@pytest.mark.parametrize("eta", [-0.1, 1.0, 1.5])
def test_rate_out_of_range(eta):
    with pytest.raises(ContractError):
        symmetric_matrix(5, eta)
    with pytest.raises(ContractError):
        asymmetric_matrix(5, eta)


def test_asymmetric_no_noise_is_identity():
    assert np.array_equal(asymmetric_matrix(5, 0.0).t, np.eye(5))
    assert np.array_equal(asymmetric_matrix(3, 0.0, [[1], [2], [0]]).t, np.eye(3))


def test_asymmetric_n2_row():
    # flip mass 0.6: 0.9 of it over {N1, N3}, 0.1 over {W, REM}
    row = asymmetric_matrix(5, 0.6).t[N2]
    assert row[N2] == pytest.approx(0.4, abs=1e-15)
    assert row[N1] == pytest.approx(0.6 * 0.9 / 2, abs=1e-15)
    assert row[N3] == pytest.approx(0.27, abs=1e-15)
    assert row[W] == pytest.approx(0.6 * 0.1 / 2, abs=1e-15)
    assert row[REM] == pytest.approx(0.03, abs=1e-15)


def test_adjacency_covering_all_incorrect_classes_takes_all_mass():
    t = asymmetric_matrix(3, 0.3, {0: [1, 2], 1: [0], 2: [0]}).t
    assert t[0, 1] == pytest.approx(0.15) and t[0, 2] == pytest.approx(0.15)
    assert t[1, 0] == pytest.approx(0.27) and t[1, 2] == pytest.approx(0.03)


def test_default_adjacency_pairs():
    assert set(DEFAULT_ADJACENCY["N2"]) == {"N1", "N3"}
    assert set(DEFAULT_ADJACENCY["N1"]) == {"W", "N2"}
    assert DEFAULT_ADJACENCY["REM"] == ["N1"]


@pytest.mark.parametrize("adj", [{"N2": ["N2"]}, [[1], [2], [5], [0], [1]], [[1], [], [1], [2], [1]],
                                 {"N2": ["Z"]}])
def test_bad_adjacency_rejected(adj):
    full = dict(DEFAULT_ADJACENCY)
    if isinstance(adj, dict):
        full.update(adj)
        adj = full
    with pytest.raises(ContractError):
        asymmetric_matrix(5, 0.4, adj)


def test_build_matrix_dispatch():
    assert np.array_equal(build_matrix("none", 5, 0.0).t, np.eye(5))
    assert np.allclose(build_matrix("sym", 5, 0.2).t, symmetric_matrix(5, 0.2).t)
    assert np.allclose(build_matrix("asym", 5, 0.2).t, asymmetric_matrix(5, 0.2).t)
    with pytest.raises(ContractError):
        build_matrix("pair", 5, 0.2)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.floats(0, 0.99), st.data())
def test_rows_stochastic_and_diagonal_exact(C, eta, data):
    adj = [[data.draw(st.sampled_from([j for j in range(C) if j != i]))] for i in range(C)]
    for m in (symmetric_matrix(C, eta), asymmetric_matrix(C, eta, adj)):
        assert np.all(np.abs(m.t.sum(axis=1) - 1) <= 1e-12)
        assert np.all((m.t >= 0) & (m.t <= 1))
        assert np.all(np.diag(m.t) == 1 - eta)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.99))
def test_adjacent_mass_exceeds_distant_mass(eta):
    t = asymmetric_matrix(5, eta).t
    for i, name in enumerate(STAGES):
        near = [STAGES.index(s) for s in DEFAULT_ADJACENCY[name]]
        far = [j for j in range(5) if j != i and j not in near]
        assert min(t[i, near]) > max(t[i, far])


def test_inject_identity_kernel():
    labels = np.random.default_rng(0).integers(0, 5, 1000)
    noisy, rep = inject(labels, symmetric_matrix(5, 0.0), 3)
    assert np.array_equal(noisy, labels) and rep.empirical_eta == 0 and rep.total == 0


def test_inject_symmetric_rate_concentration():
    labels = np.random.default_rng(1).integers(0, 5, 100_000)
    _, rep = inject(labels, symmetric_matrix(5, 0.2), 11)
    assert 0.19 <= rep.empirical_eta <= 0.21
    assert rep.empirical_eta == rep.total / rep.n_labels


def test_inject_deterministic_and_leaves_input():
    labels = np.random.default_rng(2).integers(0, 5, (50, 8))
    before = labels.copy()
    a, _ = inject(labels, asymmetric_matrix(5, 0.4), 99)
    b, _ = inject(labels, asymmetric_matrix(5, 0.4), 99)
    c, _ = inject(labels, asymmetric_matrix(5, 0.4), 100)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.array_equal(labels, before) and a.shape == labels.shape


def test_inject_report_counts_per_class():
    labels = np.repeat(np.arange(5), 2000)
    noisy, rep = inject(labels, symmetric_matrix(5, 0.3), 5)
    flips = noisy != labels
    assert rep.per_class_flip_count.tolist() == [int(flips[labels == c].sum()) for c in range(5)]


def test_inject_bad_label_names_position():
    with pytest.raises(DataError, match="position 3"):
        inject(np.array([0, 1, 2, 7, 1]), symmetric_matrix(5, 0.1), 0)
