# modules/matrix_core/service.py

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

from utils.config import cfg
from utils.errors import (
    DataError,
    DimensionMismatchError,
    NonFiniteError,
    NotPositiveDefiniteError,
    SingularSystemError,
    UsageError,
)

logger = logging.getLogger(__name__)

# Matriz densa row-major em float64: W, X, H, Δ...
DenseMatrix = npt.NDArray[np.float64]

SYMMETRY_TOL = 1e-10


def as_dense(a, *, name: str = "matriz") -> DenseMatrix:
    """
    Converte para 2-D float64 contíguo (row-major). Entradas float32 são alargadas.
    Rejeita NaN/Inf.
    """
    arr = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} precisa ser 2-D", arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contém NaN/Inf")
    return arr


@dataclass(frozen=True)
class PermutationVector:
    """
    Permutação guardada como vetor de índices: a posição k recebe a origem mapping[k].
    Nunca vira matriz 0/1.
    """
    mapping: npt.NDArray[np.int64]

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64).reshape(-1)
        if not np.array_equal(np.sort(m), np.arange(m.size)):
            raise UsageError("Permutação inválida: não é uma bijeção em 0..n-1")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)

    def __len__(self) -> int:
        return int(self.mapping.size)

    @classmethod
    def identity(cls, n: int) -> "PermutationVector":
        return cls(np.arange(n, dtype=np.int64))

    @classmethod
    def ascending(cls, keys) -> "PermutationVector":
        """Ordena por chave crescente; empates ficam na ordem original (sort estável)."""
        return cls(np.argsort(np.asarray(keys), kind="stable"))

    def inverse(self) -> "PermutationVector":
        return PermutationVector(np.argsort(self.mapping, kind="stable"))


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionMismatchError("matmul: A.cols != B.rows", a.shape, b.shape)
    return a @ b


def _check_square_symmetric(a: DenseMatrix, tol: float = SYMMETRY_TOL) -> DenseMatrix:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError("matriz precisa ser quadrada", a.shape)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - a.T))) > tol * scale:
        raise DataError("matriz não é simétrica")
    return a


def cholesky(a: DenseMatrix) -> DenseMatrix:
    """
    Fator L triangular inferior com L·Lᵀ = A. Em falha, o erro carrega o índice (0-based)
    do pivô que não foi positivo; o chamador deve amortecer e tentar de novo.
    """
    a = _check_square_symmetric(a)
    if a.shape[0] == 0:
        return a.copy()
    low, info = dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(pivot=int(info) - 1)
    if info < 0:
        raise UsageError(f"dpotrf: argumento inválido ({info})")
    return np.ascontiguousarray(low)


def spd_inverse(a: DenseMatrix) -> DenseMatrix:
    low = cholesky(a)
    n = low.shape[0]
    inv = cho_solve((low, True), np.eye(n), check_finite=False)
    # simetriza para remover ruído de arredondamento
    return np.ascontiguousarray(0.5 * (inv + inv.T))


def _solve_chunk(rhat: np.ndarray, u: np.ndarray, offset: int) -> np.ndarray:
    # λ̂·R̂ = u  <=>  R̂ᵀ·λ̂ᵀ = uᵀ
    try:
        sol = np.linalg.solve(np.swapaxes(rhat, 1, 2), u[..., None])[..., 0]
    except np.linalg.LinAlgError:
        # localiza o sistema culpado para reportar o índice
        for k in range(rhat.shape[0]):
            try:
                np.linalg.solve(rhat[k].T, u[k])
            except np.linalg.LinAlgError:
                raise SingularSystemError(batch_index=offset + k) from None
        raise
    bad = ~np.all(np.isfinite(sol), axis=1)
    if bad.any():
        raise SingularSystemError(batch_index=offset + int(np.flatnonzero(bad)[0]))
    return sol


def pad_systems(systems: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Embute cada (R̂ s×s, u 1×s) num sistema r_max×r_max: bloco final identidade e u com zeros.
    Retorna (R̂', u', tamanhos).
    """
    sizes = np.array([np.asarray(u).size for _, u in systems], dtype=np.int64)
    rmax = int(sizes.max()) if sizes.size else 0
    rhat_p = np.zeros((len(systems), rmax, rmax))
    u_p = np.zeros((len(systems), rmax))
    idx = np.arange(rmax)
    rhat_p[:, idx, idx] = 1.0
    for k, (rhat, u) in enumerate(systems):
        s = int(sizes[k])
        rhat = np.asarray(rhat, dtype=np.float64)
        if rhat.shape != (s, s):
            raise DimensionMismatchError(f"sistema {k}: R̂ precisa ser {s}×{s}", rhat.shape, np.shape(u))
        rhat_p[k, :s, :s] = rhat
        u_p[k, :s] = np.asarray(u, dtype=np.float64).reshape(-1)
    return rhat_p, u_p, sizes


def solve_batch(systems: Sequence[tuple[np.ndarray, np.ndarray]], *, padded: bool = False,
                chunk: int | None = None, threads: int | None = None,
                rcond: float | None = None):
    """
    Resolve λ̂·R̂ = u para cada sistema, em lotes de tamanho uniforme (padding com bloco
    identidade). Com `padded=True` devolve a matriz n×r_max com as coordenadas extras (zeros);
    senão, a lista de λ̂ de cada sistema no tamanho original.
    """
    if not systems:
        return np.zeros((0, 0)) if padded else []
    chunk = chunk or cfg.thanos.batch_chunk
    threads = threads or cfg.thanos.threads
    rcond = cfg.thanos.singular_rcond if rcond is None else rcond

    if rcond > 0:
        for k, (rhat, _) in enumerate(systems):
            rhat = np.asarray(rhat, dtype=np.float64)
            if rhat.size and np.linalg.cond(rhat) * rcond > 1.0:
                raise SingularSystemError(batch_index=k)

    rhat_p, u_p, sizes = pad_systems(systems)
    starts = list(range(0, len(systems), chunk))
    jobs = [(rhat_p[s:s + chunk], u_p[s:s + chunk], s) for s in starts]
    logger.debug("solve_batch: %d sistemas, r_max=%d, %d lotes", len(systems), rhat_p.shape[1], len(jobs))

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda j: _solve_chunk(*j), jobs))
    else:
        parts = [_solve_chunk(*j) for j in jobs]
    sol = np.concatenate(parts, axis=0)

    if padded:
        return sol
    return [sol[k, : sizes[k]].copy() for k in range(len(systems))]


def _check_perm(n: int, perm: PermutationVector, what: str) -> None:
    if len(perm) != n:
        raise DimensionMismatchError(f"permutação de {what} com tamanho errado", (n,), (len(perm),))


def permute_rows(w: DenseMatrix, q: PermutationVector) -> DenseMatrix:
    _check_perm(w.shape[0], q, "linhas")
    return w[q.mapping]


def inverse_permute_rows(w: DenseMatrix, q: PermutationVector) -> DenseMatrix:
    _check_perm(w.shape[0], q, "linhas")
    out = np.empty_like(w)
    out[q.mapping] = w
    return out


def permute_cols(w: DenseMatrix, p: PermutationVector) -> DenseMatrix:
    _check_perm(w.shape[1], p, "colunas")
    return np.ascontiguousarray(w[:, p.mapping])


def inverse_permute_cols(w: DenseMatrix, p: PermutationVector) -> DenseMatrix:
    _check_perm(w.shape[1], p, "colunas")
    out = np.empty_like(w)
    out[:, p.mapping] = w
    return out
