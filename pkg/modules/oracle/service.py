# modules/oracle/service.py
"""
Referências por força bruta para conferir os podadores em instâncias minúsculas.
Usa eliminação das variáveis livres (equações normais no bloco livre), caminho
diferente do dual de Lagrange usado na produção.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from modules.calibration.service import CalibrationSet
from modules.masks.service import PruneMask, phi_indices
from modules.matrix_core.service import DenseMatrix, as_dense
from utils.errors import DimensionMismatchError, SearchTooLargeError, SingularSystemError, UsageError

logger = logging.getLogger(__name__)

SEARCH_LIMIT = 20000
SINGLE_WEIGHT_LIMIT = 256


def loss_eval(delta: DenseMatrix, cal: CalibrationSet) -> float:
    """(1/d)·Σ ‖ΔXˡ‖²_F acumulado elemento a elemento, sem produto de matrizes."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim == 1:
        delta = delta.reshape(1, -1)
    if delta.shape[1] != cal.b:
        raise DimensionMismatchError("Δ.cols != b", delta.shape, cal.samples.shape)
    total = 0.0
    for x in cal.samples:
        for i in range(delta.shape[0]):
            for t in range(cal.a):
                acc = 0.0
                for j in range(cal.b):
                    acc += delta[i, j] * x[j, t]
                total += acc * acc
    return total / cal.d


def _gram(cal: CalibrationSet) -> np.ndarray:
    # G = (1/d)·Σ XXᵀ, montado amostra a amostra
    g = np.zeros((cal.b, cal.b))
    for x in cal.samples:
        g += x @ x.T
    return g / cal.d


def constrained_lsq(w, q, cal: CalibrationSet, jitter: float = 0.0) -> np.ndarray:
    """
    min ‖δX‖² com δ[q] = −w[q]. Fixa as coordenadas restritas e resolve as livres:
    G_FF·δ_F = −G_Fq·δ_q.
    """
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != cal.b:
        raise DimensionMismatchError("linha com largura diferente de b", w.shape, cal.samples.shape)
    q = np.asarray(q, dtype=np.int64).reshape(-1)
    if q.size and (q.min() < 0 or q.max() >= w.size):
        raise UsageError("índice restrito fora da linha")
    delta = np.zeros_like(w)
    delta[q] = -w[q]
    free = np.setdiff1d(np.arange(w.size), q)
    if free.size == 0 or q.size == 0:
        return delta
    g = _gram(cal)
    gff = g[np.ix_(free, free)]
    if jitter:
        gff = gff + jitter * np.eye(free.size)
        logger.debug("constrained_lsq: jitter %g no bloco livre", jitter)
    rhs = -g[np.ix_(free, q)] @ delta[q]
    try:
        sol = np.linalg.solve(gff, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystemError(0, "bloco livre da Hessiana é singular; use jitter > 0") from None
    delta[free] = sol
    return delta


def feasible_perturbations(delta, q, count: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """`count` pontos viáveis δ′ = δ + ruído, com ruído zero nas posições restritas."""
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    noise = rng.standard_normal((count, delta.size)) * scale
    noise[:, np.asarray(q, dtype=np.int64)] = 0.0
    return delta[None, :] + noise


@dataclass(frozen=True)
class SingleWeightOptimum:
    k: int
    q: int
    loss: float


def exhaustive_single_weight(w: DenseMatrix, cal: CalibrationSet) -> tuple[SingleWeightOptimum, SingleWeightOptimum]:
    """
    Testa a remoção de cada peso isolado. Devolve (melhor com atualização, melhor só
    zerando); empates ficam com a menor posição (k, q).
    """
    w = as_dense(w, name="W")
    c, b = w.shape
    if b != cal.b:
        raise DimensionMismatchError("W.cols != b da calibração", w.shape, cal.samples.shape)
    if c * b > SINGLE_WEIGHT_LIMIT:
        raise SearchTooLargeError(f"c·b = {c * b} > {SINGLE_WEIGHT_LIMIT}")
    best_upd = best_zero = None
    for k, q in itertools.product(range(c), range(b)):
        zero = np.zeros(b)
        zero[q] = -w[k, q]
        l_zero = loss_eval(zero, cal)
        l_upd = loss_eval(constrained_lsq(w[k], [q], cal), cal)
        if best_zero is None or l_zero < best_zero.loss:
            best_zero = SingleWeightOptimum(k, q, l_zero)
        if best_upd is None or l_upd < best_upd.loss:
            best_upd = SingleWeightOptimum(k, q, l_upd)
    return best_upd, best_zero


@dataclass(frozen=True)
class MaskSearchResult:
    mask: PruneMask
    loss: float
    delta: DenseMatrix
    candidates: int


def _masked_loss(w: DenseMatrix, bits: np.ndarray, cal: CalibrationSet) -> tuple[float, np.ndarray]:
    delta = np.zeros_like(w)
    for i in np.flatnonzero(bits.any(axis=1)):
        delta[i] = constrained_lsq(w[i], phi_indices(bits[i]), cal)
    return loss_eval(delta, cal), delta


def exhaustive_mask_search(w: DenseMatrix, cal: CalibrationSet, r: int) -> MaskSearchResult:
    """Enumera todas as máscaras com r posições; empate fica com a primeira em ordem lexicográfica."""
    w = as_dense(w, name="W")
    c, b = w.shape
    if b != cal.b:
        raise DimensionMismatchError("W.cols != b da calibração", w.shape, cal.samples.shape)
    cells = c * b
    if not 0 <= r <= cells:
        raise UsageError(f"r={r} fora de [0, {cells}]")
    total = math.comb(cells, r)
    if total > SEARCH_LIMIT:
        raise SearchTooLargeError(f"C({cells}, {r}) = {total} máscaras > {SEARCH_LIMIT}")
    best = None
    for combo in itertools.combinations(range(cells), r):
        bits = np.zeros(cells, dtype=bool)
        bits[list(combo)] = True
        bits = bits.reshape(c, b)
        loss, delta = _masked_loss(w, bits, cal)
        if best is None or loss < best[0]:
            best = (loss, bits, delta)
    logger.debug("busca exaustiva: %d máscaras, melhor perda %.6g", total, best[0])
    return MaskSearchResult(mask=PruneMask(best[1]), loss=best[0], delta=best[2], candidates=total)
