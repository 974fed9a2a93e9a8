import numpy as np
import pytest

from dictionary_learning import (CoupledDictionary, TrainingSet, coupled_learn,
                                 first_atom_accuracy, ksvd_learn, learn_separate,
                                 learn_single)
from errors import DataError
from sparse_coding import Dictionary, encode_signals

from conftest import planted_atoms, planted_pairs


def greedy_matches(learned, true, threshold=0.99):
    """贪心二部匹配：每次取剩余内积绝对值最大的原子对"""
    overlap = np.abs(learned.T @ true)
    matched = 0
    for _ in range(true.shape[1]):
        i, j = np.unravel_index(np.argmax(overlap), overlap.shape)
        if overlap[i, j] <= threshold:
            break
        matched += 1
        overlap[i, :] = -1.0
        overlap[:, j] = -1.0
    return matched


def planted_data(rng, dim=16, size=16, k=2, n=2000):
    atoms = rng.standard_normal((dim, size))
    atoms /= np.linalg.norm(atoms, axis=0)
    data = np.zeros((n, dim))
    for i in range(n):
        support = rng.choice(size, size=k, replace=False)
        coef = rng.uniform(0.5, 1.0, size=k) * rng.choice([-1.0, 1.0], size=k)
        data[i] = atoms[:, support] @ coef
    return atoms, data / np.linalg.norm(data, axis=1, keepdims=True)


def unit_rows(rng, n, dim):
    rows = rng.standard_normal((n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def test_replicated_orthonormal_atoms_are_recovered(rng):
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    data = np.tile(q.T, (5, 1))
    dictionary = ksvd_learn(data, n_atoms=8, cycles=1, eps=1e-8, max_atoms=1, seed=3)
    codes = encode_signals(data, dictionary, 1e-8, 1)
    assert np.mean(codes.residual_sq) < 1e-10
    assert greedy_matches(dictionary.atoms, q) == 8


def test_planted_dictionary_recovery():
    rng = np.random.default_rng(7)
    true_atoms, data = planted_data(rng)
    dictionary = ksvd_learn(data, n_atoms=16, cycles=10, eps=1e-6, max_atoms=2, seed=0)
    assert greedy_matches(dictionary.atoms, true_atoms) >= 0.8 * 16


def test_objective_history_is_non_increasing(rng):
    data = unit_rows(rng, 400, 16)
    dictionary = ksvd_learn(data, n_atoms=24, cycles=6, eps=0.05, max_atoms=4, seed=1)
    history = np.array(dictionary.history)
    assert len(history) == 6
    assert np.all(np.diff(history) <= 1e-6 * max(1.0, history[0]))


def test_atoms_are_unit_norm_and_deterministic(rng):
    data = unit_rows(rng, 200, 16)
    first = ksvd_learn(data, n_atoms=20, cycles=3, eps=0.1, max_atoms=4, seed=5)
    second = ksvd_learn(data, n_atoms=20, cycles=3, eps=0.1, max_atoms=4, seed=5)
    np.testing.assert_allclose(np.linalg.norm(first.atoms, axis=0), 1.0, atol=1e-10)
    np.testing.assert_array_equal(first.atoms, second.atoms)


def test_ksvd_rejects_too_few_samples(rng):
    with pytest.raises(DataError):
        ksvd_learn(unit_rows(rng, 10, 16), n_atoms=16, cycles=1)
    with pytest.raises(DataError):
        ksvd_learn(unit_rows(rng, 40, 16), n_atoms=16, cycles=0)


def test_identical_halves_give_identical_sub_dictionaries(rng):
    rows = unit_rows(rng, 300, 16)
    coupled = coupled_learn(TrainingSet(rows, rows.copy()), n_atoms=16, cycles=2,
                            eps=0.1, max_atoms=4, seed=0)
    np.testing.assert_allclose(coupled.focused.atoms, coupled.blurred.atoms, atol=1e-6)
    assert coupled.mode == "coupled"


def test_zero_blurred_set_reports_degenerate_space(rng, caplog):
    rows = unit_rows(rng, 300, 16)
    coupled = coupled_learn(TrainingSet(rows, np.zeros_like(rows)), n_atoms=16, cycles=2,
                            eps=0.1, max_atoms=4, seed=0)
    assert coupled.blurred.degenerate_atoms == 16
    np.testing.assert_allclose(np.linalg.norm(coupled.focused.atoms, axis=0), 1.0, atol=1e-10)
    assert "退化" in caplog.text


def test_training_set_requires_pairs(rng):
    with pytest.raises(DataError):
        TrainingSet(unit_rows(rng, 10, 16), unit_rows(rng, 9, 16))
    with pytest.raises(DataError):
        TrainingSet(np.ones((10, 16)), np.ones((10, 16)))


def test_separate_and_single_modes(training_set):
    separate = learn_separate(training_set, n_atoms=16, cycles=2, eps=0.1, max_atoms=4, seed=0)
    again = learn_separate(training_set, n_atoms=16, cycles=2, eps=0.1, max_atoms=4, seed=0)
    assert separate.mode == "separate"
    np.testing.assert_array_equal(separate.focused.atoms, again.focused.atoms)
    np.testing.assert_array_equal(separate.blurred.atoms, again.blurred.atoms)

    single = learn_single(training_set, n_atoms=16, cycles=2, eps=0.1, max_atoms=4, seed=0)
    assert single.blurred is None
    assert single.stacked().size == 16
    with pytest.raises(DataError):
        first_atom_accuracy(single, training_set.focused, training_set.blurred)


def test_orthonormal_focused_set_is_spanned_in_separate_mode(rng):
    q, _ = np.linalg.qr(rng.standard_normal((16, 16)))
    focused = np.tile(q.T, (3, 1))
    ts = TrainingSet(focused, unit_rows(rng, 48, 16))
    separate = learn_separate(ts, n_atoms=16, cycles=1, eps=1e-8, max_atoms=1, seed=0)
    codes = encode_signals(focused, separate.focused, 1e-8, 1)
    assert np.mean(codes.residual_sq) < 1e-10


def test_coupled_dictionary_validation():
    focused = Dictionary(np.eye(4), label="focused")
    with pytest.raises(DataError):
        CoupledDictionary(focused, None, mode="coupled")
    with pytest.raises(DataError):
        CoupledDictionary(focused, Dictionary(np.eye(3), label="blurred"))
    with pytest.raises(DataError):
        CoupledDictionary(focused, focused, mode="unknown")
    stacked = CoupledDictionary(focused, focused).stacked()
    assert stacked.label == "coupled" and stacked.size == 8


@pytest.mark.slow
def test_coupled_atoms_discriminate_focus():
    """12 对植入原子（清晰白噪声原子与其 σ=2 模糊版本），1200 对训练块、24 个原子、8 个周期

    每个清晰块是一个原子加上另一个原子的小比例混合和高频细节；
    在另一个随机源生成的 400 对块上统计首个匹配原子落在哪个子字典。
    """
    atoms = planted_atoms(np.random.default_rng(31))
    focused, blurred = planted_pairs(np.random.default_rng(32), atoms, 1200)
    dictionary = coupled_learn(TrainingSet(focused, blurred), n_atoms=24, cycles=8,
                               eps=0.1, max_atoms=4, seed=0)

    focused, blurred = planted_pairs(np.random.default_rng(33), atoms, 400)
    acc_focused, acc_blurred = first_atom_accuracy(dictionary, focused, blurred)
    assert acc_focused >= 0.7
    assert acc_blurred >= 0.7
