# modules/thanos/service.py

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve

from modules.baselines.service import PruneOutcome, finish_outcome
from modules.calibration.service import (
    CalibrationSet,
    raw_hessian,
    row_norms,
    window_hessian,
)
from modules.masks.service import (
    PruneMask,
    count_ceil,
    count_floor,
    nm_mask,
    phi_indices,
    psi_select,
)
from modules.matrix_core.service import (
    DenseMatrix,
    PermutationVector,
    as_dense,
    cholesky,
    inverse_permute_cols,
    inverse_permute_rows,
    permute_cols,
    permute_rows,
    solve_batch,
)
from utils.config import cfg
from utils.errors import BudgetError, DimensionMismatchError, UsageError

logger = logging.getLogger(__name__)

PATTERNS = ("unstructured", "nm", "structured")


@dataclass(frozen=True)
class ThanosConfig:
    block_size: int = 128
    sparsity: float = 0.0
    pattern: str = "unstructured"
    n: int = 2
    m: int = 4
    alpha: float = 0.0
    lambda_rel: float = 0.01
    row_chunk: int = 256

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise UsageError(f"padrão desconhecido: {self.pattern}")
        if self.block_size < 1:
            raise UsageError("block_size precisa ser ≥ 1")
        if not 0.0 <= self.sparsity < 1.0:
            raise UsageError(f"esparsidade p={self.sparsity} fora de [0, 1)")
        if not 0.0 <= self.alpha < 1.0:
            raise UsageError(f"alpha={self.alpha} fora de [0, 1)")
        if self.pattern == "nm" and not 0 < self.n < self.m:
            raise UsageError(f"padrão n:m inválido ({self.n}:{self.m}); precisa 0 < n < m")
        if self.lambda_rel < 0:
            raise UsageError("lambda_rel precisa ser ≥ 0")
        if self.row_chunk < 1:
            raise UsageError("row_chunk precisa ser ≥ 1")

    @classmethod
    def from_cfg(cls, **overrides) -> "ThanosConfig":
        pattern = overrides.get("pattern", "unstructured")
        base = dict(
            block_size=cfg.thanos.block_size_nm if pattern == "nm" else cfg.thanos.block_size,
            lambda_rel=cfg.thanos.lambda_rel,
            row_chunk=cfg.thanos.row_chunk,
        )
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def effective_block(self, b: int) -> int:
        if self.block_size > b:
            logger.debug("block_size=%d reduzido para a largura da camada (%d)", self.block_size, b)
        return min(self.block_size, b)


@dataclass(frozen=True)
class RowUpdateSystem:
    """R = linhas q de H⁻¹; R̂ = colunas q de R; u = pesos a remover."""
    R: np.ndarray
    Rhat: np.ndarray
    u: np.ndarray

    @classmethod
    def build(cls, w: np.ndarray, q: np.ndarray, hinv: DenseMatrix) -> "RowUpdateSystem":
        R = hinv[q, :]
        return cls(R=R, Rhat=R[:, q], u=np.asarray(w, dtype=np.float64).reshape(-1)[q])


def thanos_row_update(w, q, hinv: DenseMatrix) -> tuple[np.ndarray, float]:
    """
    Atualização ótima de uma linha removendo simultaneamente os pesos q:
    δ̂ = −u·R̂⁻¹·R, com perda S = ½·u·R̂⁻¹·uᵀ (pois R·H·Rᵀ = R̂).
    """
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.int64).reshape(-1)
    if q.size == 0:
        raise UsageError("conjunto de índices vazio")
    if hinv.shape != (w.size, w.size):
        raise DimensionMismatchError("H⁻¹ não bate com a largura da linha", hinv.shape, w.shape)
    system = RowUpdateSystem.build(w, q, hinv)
    (lam,) = solve_batch([(system.Rhat, system.u)])
    delta = -(lam @ system.R)
    delta[q] = -w[q]
    return delta, 0.5 * float(lam @ system.u)


def _update_window(window: DenseMatrix, block_bits: np.ndarray, hinv: DenseMatrix,
                   row_chunk: int) -> DenseMatrix:
    """
    Aplica a atualização multi-peso em todas as linhas com máscara não vazia no bloco.
    `block_bits` tem a largura do bloco (primeiras colunas da janela).
    """
    width = window.shape[1]
    rows = np.flatnonzero(block_bits.any(axis=1))
    if rows.size == 0:
        return window
    qs = [phi_indices(block_bits[i]) for i in rows]
    systems = [(hinv[np.ix_(q, q)], window[i, q]) for i, q in zip(rows, qs)]
    lam = solve_batch(systems, padded=True, chunk=row_chunk)

    # índices com padding repetindo o primeiro; λ̂ é zero nessas posições
    rmax = lam.shape[1]
    qpad = np.zeros((rows.size, rmax), dtype=np.int64)
    for k, q in enumerate(qs):
        qpad[k, : q.size] = q
        qpad[k, q.size:] = q[0]
    delta = -np.einsum("rk,rkj->rj", lam, hinv[qpad])
    out = window.copy()
    out[rows] += delta
    full_bits = np.zeros((window.shape[0], width), dtype=bool)
    full_bits[:, : block_bits.shape[1]] = block_bits
    out[full_bits] = 0.0
    logger.debug("bloco: %d linhas atualizadas, r_max=%d", rows.size, rmax)
    return out


def prune_thanos_unstructured(w: DenseMatrix, cal: CalibrationSet, config: ThanosConfig,
                              mask: PruneMask | np.ndarray | None = None) -> PruneOutcome:
    """
    Poda não estruturada bloco a bloco. Em cada bloco a máscara residual global ψ escolhe
    os r pesos restantes na janela [j1, b); só as primeiras B colunas são podadas agora.
    Com `mask` dada, usa essa máscara fixa no lugar de ψ.
    """
    w = as_dense(w, name="W")
    c, b = w.shape
    if b != cal.b:
        raise DimensionMismatchError("W.cols != b da calibração", w.shape, cal.samples.shape)
    fixed = None
    if mask is not None:
        fixed = mask.bits if isinstance(mask, PruneMask) else np.asarray(mask, dtype=bool)
        if fixed.shape != w.shape:
            raise DimensionMismatchError("máscara injetada com forma errada", fixed.shape, w.shape)

    bsize = config.effective_block(b)
    raw = raw_hessian(cal)
    norms = row_norms(cal).norms
    r = count_floor(config.sparsity * c * b)
    out = w.copy()
    bits = np.zeros((c, b), dtype=bool)
    lam = 0.0
    for j1 in range(0, b, bsize):
        j2 = min(b, j1 + bsize)
        window = out[:, j1:]
        if fixed is not None:
            block = fixed[:, j1:j2]
        else:
            if r > window.size:
                raise BudgetError(f"restam {r} pesos para remover mas a janela só tem {window.size}")
            block = psi_select(window, norms[j1:], r).bits[:, : j2 - j1]
            r -= int(block.sum())
        logger.debug("thanos: bloco [%d, %d) remove %d, restam %d", j1, j2, int(block.sum()), r)
        if not block.any():
            continue
        hess = window_hessian(raw, j1, config.lambda_rel)
        lam = lam or hess.lam
        out[:, j1:] = _update_window(window, block, hess.Hinv, config.row_chunk)
        bits[:, j1:j2] = block
    if fixed is None and r != 0:
        raise BudgetError(f"orçamento não consumido: sobraram {r} pesos")
    return finish_outcome(w, out, PruneMask(bits), "thanos", cal,
                          pattern="unstructured", lam=lam, block_size=bsize)


# ---------- perdas por linha/coluna e outliers ----------

def outlier_count(c: int, alpha: float) -> int:
    return count_ceil(alpha * c)


def outlier_row_losses(w: DenseMatrix, cal: CalibrationSet) -> np.ndarray:
    """h_i = (1/d)·Σ ‖W_i:·Xˡ‖²: perda de remover a linha inteira."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[1] != cal.b:
        raise DimensionMismatchError("W.cols != b da calibração", w.shape, cal.samples.shape)
    y = w @ cal.samples  # d×c×a
    return np.einsum("lca,lca->c", y, y) / cal.d


def column_losses(w: DenseMatrix, cal: CalibrationSet, outliers: int = 0) -> np.ndarray:
    """
    v_j = (Σ_i W²_ij nas linhas não-outlier)·(1/d)·Σ ‖Xˡ_j:‖². Os `outliers` últimos
    índices de linha de `w` (já permutada) ficam de fora.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape[1] != cal.b:
        raise DimensionMismatchError("W.cols != b da calibração", w.shape, cal.samples.shape)
    keep = w.shape[0] - outliers
    colsq = np.sum(w[:keep] ** 2, axis=0)
    return colsq * row_norms(cal).norms ** 2


def _row_order(w: DenseMatrix, cal: CalibrationSet) -> PermutationVector:
    # outliers (maior h) vão para o fim
    return PermutationVector.ascending(outlier_row_losses(w, cal))


def prune_thanos_nm(w: DenseMatrix, cal: CalibrationSet, n: int, m: int, alpha: float,
                    config: ThanosConfig) -> PruneOutcome:
    """
    n:m semiestruturado: linhas ordenadas por h_i, as ⌈αc⌉ de maior perda ficam intactas;
    nas demais, cada bloco de B colunas recebe n zeros por grupo de m e a atualização ótima.
    """
    if not 0 < n < m:
        raise UsageError(f"padrão n:m inválido ({n}:{m}); precisa 0 < n < m")
    if not 0.0 <= alpha < 1.0:
        raise UsageError(f"alpha={alpha} fora de [0, 1)")
    w = as_dense(w, name="W")
    c, b = w.shape
    if b != cal.b:
        raise DimensionMismatchError("W.cols != b da calibração", w.shape, cal.samples.shape)
    if m > b:
        raise UsageError(f"m={m} maior que a largura b={b}")
    bsize = config.effective_block(b)
    if bsize < b and bsize % m:
        raise UsageError(f"block_size={bsize} precisa ser múltiplo de m={m}")

    qperm = _row_order(w, cal)
    keep = c - outlier_count(c, alpha)
    raw = raw_hessian(cal)
    norms = row_norms(cal).norms
    out = permute_rows(w, qperm).copy()
    bits = np.zeros((c, b), dtype=bool)
    lam = 0.0
    for j1 in range(0, b, bsize):
        j2 = min(b, j1 + bsize)
        block = np.zeros((c, j2 - j1), dtype=bool)
        if keep:
            block[:keep] = nm_mask(out[:keep, j1:j2], norms[j1:j2], n, m).bits
        if not block.any():
            continue
        hess = window_hessian(raw, j1, config.lambda_rel)
        lam = lam or hess.lam
        out[:, j1:] = _update_window(out[:, j1:], block, hess.Hinv, config.row_chunk)
        bits[:, j1:j2] = block
    pruned = inverse_permute_rows(out, qperm)
    mask = PruneMask(inverse_permute_rows(bits, qperm))
    # linhas outlier voltam bit a bit idênticas
    outlier_rows = qperm.mapping[keep:]
    pruned[outlier_rows] = w[outlier_rows]
    return finish_outcome(w, pruned, mask, "thanos", cal, pattern=f"{n}:{m}", alpha=alpha,
                          lam=lam, block_size=bsize, outlier_rows=sorted(int(i) for i in outlier_rows))


def structured_column_count(p: float, b: int, alpha: float) -> int:
    """s = ⌈p·b/(1−α)⌉ colunas a remover para manter a esparsidade global p."""
    return count_ceil(p * b / (1.0 - alpha))


def prune_thanos_structured(w: DenseMatrix, cal: CalibrationSet, p: float, alpha: float,
                            lambda_rel: float | None = None) -> PruneOutcome:
    """
    Remove s colunas inteiras das linhas não-outlier numa única resolução:
    Δ̂ = −W_{:,1:s}·(H⁻¹_{1:s,1:s})⁻¹·H⁻¹_{1:s,:} sobre W e H já permutadas.
    """
    if not 0.0 <= p < 1.0:
        raise UsageError(f"esparsidade p={p} fora de [0, 1)")
    if not 0.0 <= alpha < 1.0:
        raise UsageError(f"alpha={alpha} fora de [0, 1)")
    w = as_dense(w, name="W")
    c, b = w.shape
    if b != cal.b:
        raise DimensionMismatchError("W.cols != b da calibração", w.shape, cal.samples.shape)
    s = structured_column_count(p, b, alpha)
    if s > b:
        raise UsageError(f"alpha grande demais para a esparsidade alvo: s={s} > b={b}")
    if s == 0:
        return finish_outcome(w, w.copy(), PruneMask.empty(c, b), "thanos", cal,
                              pattern="structured", alpha=alpha, columns=[])

    qperm = _row_order(w, cal)
    keep = c - outlier_count(c, alpha)
    w_rows = permute_rows(w, qperm)
    pperm = PermutationVector.ascending(column_losses(w_rows, cal, c - keep))
    w_perm = permute_cols(w_rows, pperm)
    # Hessiana calculada já na ordem permutada das features
    hess = window_hessian(raw_hessian(cal.permuted_features(pperm)), 0, lambda_rel)

    out = w_perm.copy()
    if keep:
        rhat = hess.Hinv[:s, :s]
        coef = cho_solve((cholesky(rhat), True), hess.Hinv[:s, :], check_finite=False)
        out[:keep] += -(w_perm[:keep, :s] @ coef)
        out[:keep, :s] = 0.0
    bits = np.zeros((c, b), dtype=bool)
    bits[:keep, :s] = True

    pruned = inverse_permute_cols(inverse_permute_rows(out, qperm), pperm)
    mask = PruneMask(inverse_permute_cols(inverse_permute_rows(bits, qperm), pperm))
    return finish_outcome(w, pruned, mask, "thanos", cal, pattern="structured", alpha=alpha,
                          lam=hess.lam, columns=sorted(int(j) for j in pperm.mapping[:s]),
                          outlier_rows=sorted(int(i) for i in qperm.mapping[keep:]))


class ThanosService:
    """
    Fachada dos três modos do Thanos sobre um ThanosConfig. `prune` despacha pelo padrão;
    `sweep_block_sizes` repete a poda da mesma camada para vários B.
    """

    def __init__(self, config: ThanosConfig | None = None):
        self.config = config or ThanosConfig.from_cfg()

    def prune(self, w: DenseMatrix, cal: CalibrationSet,
              mask: PruneMask | np.ndarray | None = None) -> PruneOutcome:
        c = self.config
        if mask is not None and c.pattern != "unstructured":
            raise UsageError("máscara injetada só vale para o padrão não estruturado")
        if c.pattern == "structured":
            return prune_thanos_structured(w, cal, c.sparsity, c.alpha, c.lambda_rel)
        if c.pattern == "nm":
            return prune_thanos_nm(w, cal, c.n, c.m, c.alpha, c)
        return prune_thanos_unstructured(w, cal, c, mask=mask)

    def sweep_block_sizes(self, w: DenseMatrix, cal: CalibrationSet,
                          block_sizes) -> list[tuple[int, PruneOutcome]]:
        """Uma poda por B, na ordem dada; B > b equivale a um único bloco."""
        if self.config.pattern == "structured":
            raise UsageError("o padrão estruturado não tem tamanho de bloco")
        out = []
        for bsize in block_sizes:
            outcome = ThanosService(replace(self.config, block_size=int(bsize))).prune(w, cal)
            logger.info("varredura B=%d: perda %.6g", bsize, outcome.loss_after)
            out.append((int(bsize), outcome))
        return out
