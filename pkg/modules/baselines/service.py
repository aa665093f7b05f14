# modules/baselines/service.py

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from modules.calibration.service import (
    CalibrationSet,
    Hessian,
    compute_hessian,
    reconstruction_loss,
    row_norms,
)
from modules.masks.service import (
    PruneMask,
    SparsityTarget,
    count_floor,
    magnitude_mask,
    nm_mask,
    smallest_global,
    smallest_per_group,
    wanda_rowwise_mask,
)
from modules.matrix_core.service import DenseMatrix, as_dense, cholesky
from utils.config import cfg
from utils.errors import DegenerateInverseError, DimensionMismatchError, UsageError

logger = logging.getLogger(__name__)


@dataclass
class PruneOutcome:
    """
    Resultado de uma poda. loss_before = perda de só zerar os pesos da máscara;
    loss_after = perda dos pesos devolvidos (após compensação, se o método tiver).
    """
    pruned: DenseMatrix
    mask: PruneMask
    method: str
    loss_before: float | None = None
    loss_after: float | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def zeros(self) -> int:
        return int(np.count_nonzero(self.pruned == 0.0))

    @property
    def sparsity(self) -> float:
        return self.zeros / self.pruned.size if self.pruned.size else 0.0


def finish_outcome(original: DenseMatrix, pruned: DenseMatrix, mask: PruneMask, method: str,
                   cal: CalibrationSet | None, **extra) -> PruneOutcome:
    # zeros exatos onde a máscara manda
    pruned[mask.bits] = 0.0
    loss_before = loss_after = None
    if cal is not None:
        loss_before = reconstruction_loss(-np.where(mask.bits, original, 0.0), cal)
        loss_after = reconstruction_loss(pruned - original, cal)
    return PruneOutcome(pruned=pruned, mask=mask, method=method,
                        loss_before=loss_before, loss_after=loss_after, extra=dict(extra))


def prune_magnitude(w: DenseMatrix, p: float, cal: CalibrationSet | None = None) -> PruneOutcome:
    w = as_dense(w, name="W")
    mask = magnitude_mask(w, p)
    return finish_outcome(w, w.copy(), mask, "magnitude", cal)


def prune_wanda(w: DenseMatrix, cal: CalibrationSet, p: float) -> PruneOutcome:
    w = as_dense(w, name="W")
    if w.shape[1] != cal.b:
        raise DimensionMismatchError("W.cols != b da calibração", w.shape, cal.samples.shape)
    mask = wanda_rowwise_mask(w, row_norms(cal), p)
    return finish_outcome(w, w.copy(), mask, "wanda", cal)


def obs_single_step(w: DenseMatrix, hess: Hessian, k: int, q: int) -> tuple[np.ndarray, float]:
    """
    Remove W[k, q] com a atualização ótima de um único peso sobre a janela da Hessiana
    (colunas offset..b-1). Devolve a linha completa atualizada e S = ½·W²_kq / H⁻¹_qq.
    """
    w = np.asarray(w, dtype=np.float64)
    o = hess.offset
    if w.shape[1] - o != hess.size:
        raise DimensionMismatchError("janela da Hessiana não bate com W", w.shape, hess.H.shape)
    if not o <= q < w.shape[1]:
        raise UsageError(f"coluna {q} fora da janela [{o}, {w.shape[1]})")
    qi = q - o
    d = float(hess.Hinv[qi, qi])
    if d <= 0.0:
        raise DegenerateInverseError(f"H⁻¹[{q},{q}] = {d:g} não é positivo")
    wkq = float(w[k, q])
    row = w[k].copy()
    row[o:] -= (wkq / d) * hess.Hinv[qi, :]
    row[q] = 0.0
    return row, 0.5 * wkq * wkq / d


def prune_sparsegpt(w: DenseMatrix, cal: CalibrationSet, target: SparsityTarget,
                    block_size: int = 128, mask_block_size: int | None = None,
                    lambda_rel: float | None = None) -> PruneOutcome:
    """
    Poda sequencial da esquerda para a direita. A cada Bs colunas escolhe a máscara pela
    métrica W²/[H⁻¹]_qq; cada peso removido atualiza o resto da linha à direita. As
    atualizações dentro do bloco B são acumuladas e propagadas de uma vez para as colunas
    seguintes. A Hessiana da janela vem do fator de Cholesky de H⁻¹ (H⁻¹ = UᵀU).
    """
    w = as_dense(w, name="W")
    c, b = w.shape
    if b != cal.b:
        raise DimensionMismatchError("W.cols != b da calibração", w.shape, cal.samples.shape)
    if block_size < 1:
        raise UsageError("block_size precisa ser ≥ 1")
    bsize = min(block_size, b)
    msize = target.m if target.is_nm else (mask_block_size or bsize)
    if bsize < b and bsize % msize:
        raise UsageError(f"Bs={msize} precisa dividir B={bsize}")

    hess = compute_hessian(cal, lambda_rel)
    upper = np.ascontiguousarray(cholesky(hess.Hinv).T)
    diag_sq = np.diag(upper) ** 2

    out = w.copy()
    bits = np.zeros((c, b), dtype=bool)
    for i1 in range(0, b, bsize):
        i2 = min(i1 + bsize, b)
        w1 = out[:, i1:i2].copy()
        err1 = np.zeros_like(w1)
        u1 = upper[i1:i2, i1:i2]
        for i in range(i2 - i1):
            col = i1 + i
            if i % msize == 0:
                hi = min(i + msize, i2 - i1)
                metric = w1[:, i:hi] ** 2 / diag_sq[col:i1 + hi][None, :]
                if target.is_nm:
                    sel = smallest_per_group(metric, target.n, target.m)
                else:
                    sel = smallest_global(metric, count_floor(target.ratio * metric.size))
                bits[:, col:i1 + hi] = sel.bits
            pick = bits[:, col]
            err = np.where(pick, w1[:, i] / u1[i, i], 0.0)
            w1[:, i:] -= np.outer(err, u1[i, i:])
            w1[pick, i] = 0.0
            err1[:, i] = err
        out[:, i1:i2] = w1
        if i2 < b:
            out[:, i2:] -= err1 @ upper[i1:i2, i2:]
    logger.debug("sparsegpt: %d pesos removidos (B=%d, Bs=%d)", int(bits.sum()), bsize, msize)
    return finish_outcome(w, out, PruneMask(bits), "sparsegpt", cal, lam=hess.lam)


class BaselineService:
    """Fachada dos podadores de referência: escolhe o método e o padrão (razão ou n:m)."""

    METHODS = ("magnitude", "wanda", "sparsegpt")

    def __init__(self, method: str, block_size: int | None = None, mask_block_size: int | None = None,
                 lambda_rel: float | None = None):
        if method not in self.METHODS:
            raise UsageError(f"método de referência desconhecido: {method}")
        self.method = method
        self.block_size = block_size or cfg.thanos.block_size
        self.mask_block_size = mask_block_size
        self.lambda_rel = lambda_rel

    @staticmethod
    def _zero_only(w: DenseMatrix, mask: PruneMask, method: str, cal: CalibrationSet) -> PruneOutcome:
        return finish_outcome(w, np.array(w, dtype=np.float64), mask, method, cal)

    def prune(self, w: DenseMatrix, cal: CalibrationSet, target: SparsityTarget) -> PruneOutcome:
        if self.method == "sparsegpt":
            return prune_sparsegpt(w, cal, target, block_size=self.block_size,
                                   mask_block_size=self.mask_block_size, lambda_rel=self.lambda_rel)
        if self.method == "magnitude":
            if target.is_nm:
                return self._zero_only(w, smallest_per_group(np.abs(w), target.n, target.m), "magnitude", cal)
            return prune_magnitude(w, target.ratio, cal)
        if target.is_nm:
            return self._zero_only(w, nm_mask(w, row_norms(cal), target.n, target.m), "wanda", cal)
        return prune_wanda(w, cal, target.ratio)
