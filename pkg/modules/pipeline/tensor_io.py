# modules/pipeline/tensor_io.py
"""
Formato THNS: magic "THNS", versão u32, rank u32 (2 ou 3), dims u64×rank, dtype u8
(0 = float32, 1 = float64) e o payload row-major. Tudo little-endian.
"""

from __future__ import annotations

import math
import os

import numpy as np

from utils.errors import NonFiniteError, TensorFormatError, UsageError

MAGIC = b"THNS"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _take(buf: memoryview, pos: int, n: int, what: str) -> bytes:
    if pos + n > len(buf):
        raise TensorFormatError("truncated", f"arquivo termina no meio de {what}")
    return bytes(buf[pos:pos + n])


def decode_tensor(data: bytes) -> tuple[np.ndarray, int]:
    """Decodifica os bytes e devolve (array float64, código do dtype original)."""
    buf = memoryview(data)
    if _take(buf, 0, 4, "magic") != MAGIC:
        raise TensorFormatError("bad_magic", "não é um arquivo THNS")
    version = int(np.frombuffer(_take(buf, 4, 4, "versão"), dtype="<u4")[0])
    if version != VERSION:
        raise TensorFormatError("bad_version", f"versão {version} não suportada")
    rank = int(np.frombuffer(_take(buf, 8, 4, "rank"), dtype="<u4")[0])
    if rank not in (2, 3):
        raise TensorFormatError("bad_rank", f"rank {rank} (esperado 2 ou 3)")
    pos = 12
    dims = tuple(int(x) for x in np.frombuffer(_take(buf, pos, 8 * rank, "dimensões"), dtype="<u8"))
    pos += 8 * rank
    code = _take(buf, pos, 1, "dtype")[0]
    pos += 1
    if code not in DTYPES:
        raise TensorFormatError("bad_dtype", f"código de dtype {code} desconhecido")
    dtype = DTYPES[code]
    # produto em int do Python: dimensões declaradas enormes não podem dar overflow
    nbytes = math.prod(dims) * dtype.itemsize
    if len(buf) - pos < nbytes:
        raise TensorFormatError("truncated", f"payload com {len(buf) - pos} bytes, esperado {nbytes}")
    if len(buf) - pos > nbytes:
        raise TensorFormatError("truncated", f"{len(buf) - pos - nbytes} bytes sobrando após o payload")
    arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dtype).reshape(dims)
    out = arr.astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("tensor contém NaN/Inf")
    return out, code


def encode_tensor(arr, dtype_code: int = 1) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim not in (2, 3):
        raise UsageError(f"só tensores de rank 2 ou 3 (recebido {arr.ndim})")
    if dtype_code not in DTYPES:
        raise UsageError(f"código de dtype {dtype_code} inválido")
    # float64 -> float32 arredonda para o par mais próximo (astype do numpy)
    payload = np.ascontiguousarray(arr, dtype=DTYPES[dtype_code])
    header = (MAGIC + np.array([VERSION, arr.ndim], dtype="<u4").tobytes()
              + np.array(arr.shape, dtype="<u8").tobytes() + bytes([dtype_code]))
    return header + payload.tobytes()


def read_tensor(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def load_tensor(path) -> np.ndarray:
    """Matriz c×b ou tensor de calibração d×b×a, sempre em float64."""
    return read_tensor(path)[0]


def save_tensor(path, arr, dtype_code: int = 1) -> None:
    data = encode_tensor(arr, dtype_code)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)
