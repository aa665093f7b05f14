import numpy as np
import pytest

from modules.calibration.service import (
    CalibrationSet,
    compute_hessian,
    raw_hessian,
    reconstruction_loss,
    row_norms,
    trailing_hessian,
    window_hessian,
)
from modules.matrix_core.service import PermutationVector
from utils.errors import DataError, DimensionMismatchError, NotPositiveDefiniteError


def test_amostra_2d_vira_d_igual_1():
    cal = CalibrationSet(np.eye(3))
    assert (cal.d, cal.b, cal.a) == (1, 3, 3)


def test_from_samples_formas_diferentes():
    with pytest.raises(DimensionMismatchError):
        CalibrationSet.from_samples([np.ones((2, 3)), np.ones((3, 3))])


def test_calibracao_com_nan():
    with pytest.raises(DataError):
        CalibrationSet(np.array([[[np.inf]]]))


def test_raw_hessian_media_das_amostras(rng):
    xs = rng.standard_normal((3, 4, 5))
    expected = sum(2.0 * x @ x.T for x in xs) / 3
    np.testing.assert_allclose(raw_hessian(CalibrationSet(xs)), expected, rtol=1e-12)


def test_amortecimento_relativo(make_layer):
    _, cal = make_layer(b=5)
    raw = raw_hessian(cal)
    hess = compute_hessian(cal, lambda_rel=0.01)
    lam = 0.01 * np.mean(np.diag(raw))
    assert hess.lam == pytest.approx(lam)
    np.testing.assert_allclose(hess.H, raw + lam * np.eye(5), rtol=1e-14)
    np.testing.assert_allclose(hess.Hinv @ hess.H, np.eye(5), atol=1e-9)


def test_janela_final_sai_do_acumulador_sem_amortecimento(make_layer):
    _, cal = make_layer(b=8)
    raw = raw_hessian(cal)
    hess = trailing_hessian(cal, 3, lambda_rel=0.05)
    window = raw[3:, 3:]
    lam = 0.05 * np.mean(np.diag(window))
    assert hess.offset == 3 and hess.size == 5
    np.testing.assert_allclose(hess.H, window + lam * np.eye(5), rtol=1e-14)


def test_hessiana_singular_sem_amortecimento_aponta_pivo():
    x = np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0], [3.0, -1.0, 2.0]])
    with pytest.raises(NotPositiveDefiniteError) as exc:
        compute_hessian(CalibrationSet(x), lambda_rel=0.0)
    assert exc.value.pivot == 1
    assert "lambda_rel" in str(exc.value)


def test_amortecimento_resolve_a_singularidade():
    x = np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0], [3.0, -1.0, 2.0]])
    hess = window_hessian(raw_hessian(CalibrationSet(x)), 0, 0.01)
    assert np.all(np.isfinite(hess.Hinv))


def test_row_norms_com_identidade():
    np.testing.assert_allclose(row_norms(CalibrationSet(np.eye(4))).norms, np.ones(4))


def test_row_norms_media_entre_amostras(rng):
    xs = rng.standard_normal((4, 3, 6))
    expected = np.sqrt(np.mean([np.sum(x ** 2, axis=1) for x in xs], axis=0))
    np.testing.assert_allclose(row_norms(CalibrationSet(xs)).norms, expected, rtol=1e-13)


def test_reconstruction_loss(rng, make_layer):
    w, cal = make_layer()
    delta = rng.standard_normal(w.shape)
    expected = np.mean([np.linalg.norm(delta @ x) ** 2 for x in cal.samples])
    assert reconstruction_loss(delta, cal) == pytest.approx(expected, rel=1e-12)
    assert reconstruction_loss(np.zeros_like(w), cal) == 0.0


def test_permuted_features_coerente_com_colunas(rng, make_layer):
    w, cal = make_layer(b=6)
    p = PermutationVector(rng.permutation(6))
    permuted = cal.permuted_features(p)
    np.testing.assert_allclose(w[:, p.mapping] @ permuted.samples, w @ cal.samples, rtol=1e-12, atol=1e-12)


def test_hessiana_independe_da_ordem_das_amostras(rng):
    samples = rng.standard_normal((5, 6, 9))
    base = compute_hessian(CalibrationSet(samples), lambda_rel=0.01)
    shuffled = compute_hessian(CalibrationSet(samples[rng.permutation(5)]), lambda_rel=0.01)
    np.testing.assert_allclose(shuffled.H, base.H, rtol=0, atol=1e-12)
    assert shuffled.lam == pytest.approx(base.lam, rel=1e-12)
