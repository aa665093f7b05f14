import numpy as np
import pytest

from modules.calibration.service import CalibrationSet, reconstruction_loss, row_norms
from modules.masks.service import saliency
from modules.oracle.service import (
    constrained_lsq,
    exhaustive_mask_search,
    exhaustive_single_weight,
    feasible_perturbations,
    loss_eval,
)
from modules.thanos.service import ThanosConfig, prune_thanos_unstructured
from utils.errors import DimensionMismatchError, SearchTooLargeError


def test_loss_eval_zero(make_layer):
    w, cal = make_layer()
    assert loss_eval(np.zeros_like(w), cal) == 0.0


def test_loss_eval_com_identidade(rng):
    delta = rng.standard_normal((3, 4))
    assert loss_eval(delta, CalibrationSet(np.eye(4))) == pytest.approx(np.sum(delta ** 2), rel=1e-12)


def test_loss_eval_contra_produto(rng, make_layer):
    w, cal = make_layer(c=3, b=5, a=7)
    delta = rng.standard_normal(w.shape)
    assert loss_eval(delta, cal) == pytest.approx(reconstruction_loss(delta, cal), rel=1e-12)


def test_loss_eval_forma_errada(make_layer):
    _, cal = make_layer(b=5)
    with pytest.raises(DimensionMismatchError):
        loss_eval(np.ones((2, 4)), cal)


def test_lsq_sem_variaveis_livres(rng, make_layer):
    w, cal = make_layer(b=5)
    np.testing.assert_array_equal(constrained_lsq(w[0], np.arange(5), cal), -w[0])


def test_lsq_x_diagonal(rng):
    cal = CalibrationSet(np.diag([1.0, 2.0, 3.0, 4.0]))
    w = rng.standard_normal(4)
    expected = np.zeros(4)
    expected[2] = -w[2]
    np.testing.assert_allclose(constrained_lsq(w, [2], cal), expected, atol=1e-15)


def test_lsq_e_minimo_global(rng, make_layer):
    w, cal = make_layer(b=6, a=10)
    q = [1, 4]
    delta = constrained_lsq(w[0], q, cal)
    best = loss_eval(delta, cal)
    for alt in feasible_perturbations(delta, q, 100, rng, scale=0.5):
        np.testing.assert_array_equal(alt[q], delta[q])
        assert loss_eval(alt, cal) >= best - 1e-10


def test_exemplo_da_grade_sem_atualizacao(grade_exemplo):
    w, cal = grade_exemplo
    _, zero = exhaustive_single_weight(w, cal)
    assert (zero.k, zero.q) == (0, 1)
    assert zero.loss == pytest.approx(4.0)


def test_peso_enorme_nunca_e_o_escolhido(rng):
    w = rng.standard_normal((3, 3))
    w[1, 2] = 1e6
    cal = CalibrationSet(rng.standard_normal((2, 3, 5)))
    upd, zero = exhaustive_single_weight(w, cal)
    assert (upd.k, upd.q) != (1, 2)
    assert (zero.k, zero.q) != (1, 2)


def test_wanda_e_otimo_para_um_peso():
    rng = np.random.default_rng(42)
    for _ in range(100):
        w = rng.standard_normal((4, 4))
        cal = CalibrationSet(rng.standard_normal((2, 4, 8)))
        grid = saliency(w, row_norms(cal))
        _, zero = exhaustive_single_weight(w, cal)
        k, q = np.unravel_index(np.argmin(grid), grid.shape)
        assert (zero.k, zero.q) == (k, q)
        assert zero.loss == pytest.approx(grid.min() ** 2, rel=1e-12)


def test_busca_exaustiva_r_zero(make_layer):
    w, cal = make_layer(c=2, b=3)
    res = exhaustive_mask_search(w, cal, 0)
    assert res.mask.count == 0 and res.loss == 0.0


def test_busca_exaustiva_mascara_cheia(make_layer):
    w, cal = make_layer(c=2, b=3)
    res = exhaustive_mask_search(w, cal, 6)
    assert res.mask.count == 6
    assert res.loss == pytest.approx(reconstruction_loss(w, cal), rel=1e-12)


def test_thanos_nao_bate_o_oraculo(make_layer):
    w, cal = make_layer(c=2, b=3, a=6)
    best = exhaustive_mask_search(w, cal, 2)
    assert best.candidates == 15
    thanos = prune_thanos_unstructured(w, cal, ThanosConfig(block_size=3, sparsity=1 / 3, lambda_rel=0.0))
    assert thanos.mask.count == 2
    assert thanos.loss_after >= best.loss - 1e-10


def test_busca_grande_demais(make_layer):
    w, cal = make_layer(c=5, b=5)
    with pytest.raises(SearchTooLargeError):
        exhaustive_mask_search(w, cal, 5)
