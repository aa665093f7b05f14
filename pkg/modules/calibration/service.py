# modules/calibration/service.py

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from modules.matrix_core.service import DenseMatrix, PermutationVector, as_dense, spd_inverse
from utils.config import cfg
from utils.errors import DataError, DimensionMismatchError, NotPositiveDefiniteError, UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationSet:
    """d amostras X¹..X^d (cada uma b×a) que alimentam uma camada linear."""
    samples: np.ndarray  # d×b×a

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64))
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise DimensionMismatchError("calibração precisa ser d×b×a com d ≥ 1", arr.shape)
        if not np.all(np.isfinite(arr)):
            raise DataError("calibração contém NaN/Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @classmethod
    def from_samples(cls, samples: Sequence[DenseMatrix]) -> "CalibrationSet":
        mats = [as_dense(x, name="amostra") for x in samples]
        if not mats:
            raise DataError("calibração vazia (d = 0)")
        shapes = {m.shape for m in mats}
        if len(shapes) != 1:
            raise DimensionMismatchError("amostras com formas diferentes", *sorted(shapes))
        return cls(np.stack(mats))

    @property
    def d(self) -> int: return int(self.samples.shape[0])
    @property
    def b(self) -> int: return int(self.samples.shape[1])
    @property
    def a(self) -> int: return int(self.samples.shape[2])

    def permuted_features(self, p: PermutationVector) -> "CalibrationSet":
        """Reordena as linhas (features) de todas as amostras, coerente com permute_cols(W, p)."""
        if len(p) != self.b:
            raise DimensionMismatchError("permutação de features com tamanho errado", (self.b,), (len(p),))
        return CalibrationSet(self.samples[:, p.mapping, :])


@dataclass(frozen=True)
class Hessian:
    H: DenseMatrix      # já amortecida
    Hinv: DenseMatrix
    lam: float          # λ efetivamente somado à diagonal
    offset: int = 0     # coluna j₂ onde começa a janela

    @property
    def size(self) -> int:
        return int(self.H.shape[0])


@dataclass(frozen=True)
class RowNorms:
    norms: np.ndarray

    def __len__(self) -> int:
        return int(self.norms.size)


def raw_hessian(cal: CalibrationSet) -> DenseMatrix:
    """Acumulador sem amortecimento: (2/d)·Σ Xˡ(Xˡ)ᵀ."""
    s = cal.samples
    h = np.tensordot(s, s, axes=([0, 2], [0, 2])) * (2.0 / cal.d)
    return np.ascontiguousarray(0.5 * (h + h.T))


def window_hessian(raw: DenseMatrix, j2: int = 0, lambda_rel: float | None = None) -> Hessian:
    """
    Corta a janela final [j2:, j2:] do acumulador SEM amortecimento, amortece com
    λ = lambda_rel·média(diag) da janela e inverte via Cholesky.
    """
    lambda_rel = cfg.thanos.lambda_rel if lambda_rel is None else float(lambda_rel)
    if lambda_rel < 0:
        raise UsageError("lambda_rel precisa ser ≥ 0")
    b = raw.shape[0]
    if not 0 <= j2 < b:
        raise UsageError(f"janela inválida: j2={j2} fora de [0, {b})")
    h = raw[j2:, j2:].copy()
    lam = lambda_rel * float(np.mean(np.diag(h)))
    if lam > 0:
        h[np.diag_indices_from(h)] += lam
    try:
        hinv = spd_inverse(h)
    except NotPositiveDefiniteError as e:
        raise NotPositiveDefiniteError(
            e.pivot,
            f"Hessiana não é definida positiva (pivô {e.pivot}, janela {j2}, λ={lam:.3g}); "
            f"aumente lambda_rel (atual {lambda_rel:g})",
        ) from e
    return Hessian(H=h, Hinv=hinv, lam=lam, offset=j2)


def compute_hessian(cal: CalibrationSet, lambda_rel: float | None = None) -> Hessian:
    return window_hessian(raw_hessian(cal), 0, lambda_rel)


def trailing_hessian(cal: CalibrationSet, j2: int, lambda_rel: float | None = None) -> Hessian:
    return window_hessian(raw_hessian(cal), j2, lambda_rel)


def row_norms(cal: CalibrationSet) -> RowNorms:
    # norms[q] = sqrt((1/d)·Σ ‖Xˡ_q:‖²)
    sq = np.einsum("lqa,lqa->q", cal.samples, cal.samples) / cal.d
    return RowNorms(np.sqrt(sq))


def reconstruction_loss(delta: DenseMatrix, cal: CalibrationSet) -> float:
    """(1/d)·Σ ‖Δ·Xˡ‖²_F: variação da saída da camada causada pela poda."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 2 or delta.shape[1] != cal.b:
        raise DimensionMismatchError("Δ.cols != b", delta.shape, cal.samples.shape)
    out = delta @ cal.samples  # d×c×a
    return float(np.sum(out * out) / cal.d)
