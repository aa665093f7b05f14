# modules/masks/service.py

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from modules.calibration.service import RowNorms
from modules.matrix_core.service import DenseMatrix
from utils.errors import DimensionMismatchError, UsageError

# Grade de saliências c×b e conjunto de índices crescente.
SaliencyGrid = npt.NDArray[np.float64]
IndexSet = npt.NDArray[np.int64]

# folga para p·c·b virar inteiro apesar do arredondamento binário (0.29·100 = 28.999...)
_COUNT_EPS = 1e-9


def count_floor(x: float) -> int:
    return int(math.floor(x + _COUNT_EPS))


def count_ceil(x: float) -> int:
    return int(math.ceil(x - _COUNT_EPS))


@dataclass(frozen=True)
class PruneMask:
    """M[i][j] = True marca o peso (i, j) para remoção."""
    bits: npt.NDArray[np.bool_]

    def __post_init__(self):
        bits = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if bits.ndim != 2:
            raise DimensionMismatchError("máscara precisa ser 2-D", bits.shape)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, rows: int, cols: int) -> "PruneMask":
        return cls(np.zeros((rows, cols), dtype=bool))

    @property
    def rows(self) -> int: return int(self.bits.shape[0])
    @property
    def cols(self) -> int: return int(self.bits.shape[1])
    @property
    def count(self) -> int: return int(np.count_nonzero(self.bits))


def _norm_vector(norms: RowNorms | np.ndarray) -> np.ndarray:
    return np.asarray(norms.norms if isinstance(norms, RowNorms) else norms, dtype=np.float64).reshape(-1)


def _check_fraction(p: float) -> None:
    if not 0.0 <= p < 1.0:
        raise UsageError(f"esparsidade p={p} fora de [0, 1)")


def saliency(w: DenseMatrix, norms: RowNorms | np.ndarray) -> SaliencyGrid:
    nv = _norm_vector(norms)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != nv.size:
        raise DimensionMismatchError("W.cols != len(norms)", w.shape, nv.shape)
    return np.abs(w) * nv[None, :]


# ---------- seleção genérica sobre uma grade de métricas ----------

def smallest_global(metric: np.ndarray, r: int) -> PruneMask:
    """Marca os r menores valores da grade inteira; empates pelo índice row-major."""
    metric = np.asarray(metric)
    flat = metric.reshape(-1)
    if not 0 <= r <= flat.size:
        raise UsageError(f"r={r} fora de [0, {flat.size}]")
    bits = np.zeros(flat.size, dtype=bool)
    bits[np.argsort(flat, kind="stable")[:r]] = True
    return PruneMask(bits.reshape(metric.shape))


def smallest_per_row(metric: np.ndarray, k: int) -> PruneMask:
    metric = np.asarray(metric)
    bits = np.zeros(metric.shape, dtype=bool)
    if k > 0:
        order = np.argsort(metric, axis=1, kind="stable")[:, :k]
        np.put_along_axis(bits, order, True, axis=1)
    return PruneMask(bits)


def smallest_per_group(metric: np.ndarray, n: int, m: int) -> PruneMask:
    """
    n marcas em cada grupo alinhado de m colunas por linha. Grupo final curto de largura m'
    recebe ⌊n·m'/m⌋ marcas.
    """
    if not 0 < n < m:
        raise UsageError(f"padrão n:m inválido ({n}:{m}); precisa 0 < n < m")
    metric = np.asarray(metric)
    c, width = metric.shape
    bits = np.zeros((c, width), dtype=bool)
    full = (width // m) * m
    if full:
        groups = metric[:, :full].reshape(c, width // m, m)
        order = np.argsort(groups, axis=2, kind="stable")[:, :, :n]
        gbits = np.zeros(groups.shape, dtype=bool)
        np.put_along_axis(gbits, order, True, axis=2)
        bits[:, :full] = gbits.reshape(c, full)
    tail = width - full
    if tail:
        k = count_floor(n * tail / m)
        bits[:, full:] = smallest_per_row(metric[:, full:], k).bits
    return PruneMask(bits)


# ---------- máscaras nomeadas ----------

def psi_select(w: DenseMatrix, norms: RowNorms | np.ndarray, r: int) -> PruneMask:
    """ψ: os r pesos de menor |W_ij|·‖X_j:‖ na janela inteira."""
    return smallest_global(saliency(w, norms), r)


def phi_indices(mask_row) -> IndexSet:
    """φ: posições (0-based, crescentes) dos elementos verdadeiros."""
    return np.flatnonzero(np.asarray(mask_row, dtype=bool)).astype(np.int64)


def indices_to_row(indices, width: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= width or np.any(np.diff(idx) <= 0)):
        raise UsageError("conjunto de índices precisa ser crescente e dentro da largura")
    row = np.zeros(width, dtype=bool)
    row[idx] = True
    return row


def nm_mask(w: DenseMatrix, norms: RowNorms | np.ndarray, n: int, m: int) -> PruneMask:
    return smallest_per_group(saliency(w, norms), n, m)


def magnitude_mask(w: DenseMatrix, p: float) -> PruneMask:
    _check_fraction(p)
    w = np.asarray(w, dtype=np.float64)
    return smallest_global(np.abs(w), count_floor(p * w.size))


def wanda_rowwise_mask(w: DenseMatrix, norms: RowNorms | np.ndarray, p: float) -> PruneMask:
    _check_fraction(p)
    grid = saliency(w, norms)
    return smallest_per_row(grid, count_floor(p * grid.shape[1]))


@dataclass(frozen=True)
class SparsityTarget:
    """Alvo de esparsidade: razão p (não estruturado) ou padrão n:m."""
    ratio: float | None = None
    n: int | None = None
    m: int | None = None

    def __post_init__(self):
        if self.is_nm:
            if not 0 < self.n < self.m:
                raise UsageError(f"padrão n:m inválido ({self.n}:{self.m}); precisa 0 < n < m")
        elif self.ratio is None:
            raise UsageError("alvo de esparsidade vazio")
        else:
            _check_fraction(self.ratio)

    @property
    def is_nm(self) -> bool:
        return self.n is not None and self.m is not None

    @property
    def density_removed(self) -> float:
        return self.n / self.m if self.is_nm else float(self.ratio)

    @classmethod
    def parse(cls, text: str) -> "SparsityTarget":
        text = str(text).strip()
        try:
            if ":" in text:
                n, m = text.split(":", 1)
                return cls(n=int(n), m=int(m))
            return cls(ratio=float(text))
        except ValueError:
            raise UsageError(f"alvo de esparsidade ilegível: '{text}' (use 0.5 ou 2:4)") from None

    def __str__(self) -> str:
        return f"{self.n}:{self.m}" if self.is_nm else f"{self.ratio:g}"
