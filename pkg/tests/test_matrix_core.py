import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modules.matrix_core.service import (
    PermutationVector,
    as_dense,
    cholesky,
    inverse_permute_cols,
    inverse_permute_rows,
    matmul,
    pad_systems,
    permute_cols,
    permute_rows,
    solve_batch,
    spd_inverse,
)
from utils.errors import DimensionMismatchError, NonFiniteError, NotPositiveDefiniteError, SingularSystemError, UsageError


def _spd(rng, n):
    a = rng.standard_normal((n, n + 3))
    return a @ a.T + 0.1 * np.eye(n)


def test_matmul_confere_com_numpy(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    np.testing.assert_allclose(matmul(a, b), a @ b, rtol=0, atol=1e-14)


def test_matmul_dimensoes_erradas_mostra_as_duas_formas():
    with pytest.raises(DimensionMismatchError) as exc:
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    assert exc.value.shapes == ((2, 3), (2, 3))


def test_as_dense_rejeita_nan():
    with pytest.raises(NonFiniteError):
        as_dense([[1.0, np.nan]])


def test_as_dense_alarga_float32():
    arr = as_dense(np.ones((2, 2), dtype=np.float32))
    assert arr.dtype == np.float64 and arr.flags.c_contiguous


def test_cholesky_reconstroi_a_matriz(rng):
    a = _spd(rng, 5)
    low = cholesky(a)
    np.testing.assert_allclose(low @ low.T, a, rtol=1e-12, atol=1e-12)
    assert np.allclose(np.triu(low, 1), 0.0)


def test_cholesky_informa_o_pivo():
    with pytest.raises(NotPositiveDefiniteError) as exc:
        cholesky(np.diag([1.0, -1.0, 1.0]))
    assert exc.value.pivot == 1


def test_spd_inverse(rng):
    a = _spd(rng, 6)
    inv = spd_inverse(a)
    np.testing.assert_allclose(inv @ a, np.eye(6), atol=1e-9)
    np.testing.assert_array_equal(inv, inv.T)


def test_permutacao_invalida():
    with pytest.raises(UsageError):
        PermutationVector(np.array([0, 0, 2]))


def test_ascending_estavel():
    p = PermutationVector.ascending([2.0, 1.0, 2.0, 0.0])
    np.testing.assert_array_equal(p.mapping, [3, 1, 0, 2])
    np.testing.assert_array_equal(p.inverse().mapping, [2, 1, 3, 0])


@settings(max_examples=50, deadline=None)
@given(perm=st.permutations(list(range(7))), seed=st.integers(0, 2**32 - 1))
def test_permutacoes_ida_e_volta_bit_a_bit(perm, seed):
    w = np.random.default_rng(seed).standard_normal((7, 7))
    p = PermutationVector(np.array(perm))
    np.testing.assert_array_equal(inverse_permute_rows(permute_rows(w, p), p), w)
    np.testing.assert_array_equal(inverse_permute_cols(permute_cols(w, p), p), w)
    np.testing.assert_array_equal(permute_rows(w, p)[0], w[perm[0]])


def test_pad_systems_bloco_identidade(rng):
    systems = [(_spd(rng, 1), rng.standard_normal(1)), (_spd(rng, 3), rng.standard_normal(3))]
    rhat, u, sizes = pad_systems(systems)
    assert rhat.shape == (2, 3, 3)
    np.testing.assert_array_equal(sizes, [1, 3])
    np.testing.assert_array_equal(rhat[0, 1:, 1:], np.eye(2))
    np.testing.assert_array_equal(u[0, 1:], [0.0, 0.0])


def test_solve_batch_tamanhos_diferentes(rng):
    systems = [(_spd(rng, s), rng.standard_normal(s)) for s in (1, 4, 2, 3)]
    sols = solve_batch(systems, chunk=2, threads=1)
    for (rhat, u), lam in zip(systems, sols):
        np.testing.assert_allclose(lam @ rhat, u, atol=1e-10)
    padded = solve_batch(systems, padded=True, chunk=2, threads=1)
    assert padded.shape == (4, 4)
    np.testing.assert_array_equal(padded[0, 1:], 0.0)


def test_solve_batch_independe_das_threads(rng):
    systems = [(_spd(rng, 3), rng.standard_normal(3)) for _ in range(9)]
    a = solve_batch(systems, padded=True, chunk=2, threads=1)
    b = solve_batch(systems, padded=True, chunk=2, threads=4)
    np.testing.assert_array_equal(a, b)


def test_solve_batch_singular_aponta_o_sistema(rng):
    systems = [(_spd(rng, 2), np.ones(2)), (np.ones((2, 2)), np.ones(2))]
    with pytest.raises(SingularSystemError) as exc:
        solve_batch(systems, threads=1)
    assert exc.value.batch_index == 1


def test_matmul_associativo(rng):
    for _ in range(20):
        a, b, c = rng.standard_normal((4, 5)), rng.standard_normal((5, 3)), rng.standard_normal((3, 6))
        np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=0, atol=1e-9)
