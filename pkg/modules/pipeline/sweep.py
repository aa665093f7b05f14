# modules/pipeline/sweep.py

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
import pandas as pd

from modules.pipeline.manifest import ModelManifest
from modules.pipeline.report import emit_report
from modules.pipeline.service import PipelineService, RunConfig
from utils.errors import UsageError

logger = logging.getLogger(__name__)

SWEEP_FIELDS = ("pattern", "block_size", "zeros", "cells", "sparsity", "loss_before", "loss_after")
SWEEP_METHODS = ("thanos", "sparsegpt")


@dataclass(frozen=True)
class SweepRow:
    pattern: str
    block_size: int
    zeros: int
    cells: int
    sparsity: float
    loss_before: float
    loss_after: float


def parse_block_sizes(text) -> list[int]:
    """'8,16,32' -> [8, 16, 32]; repetidos são descartados mantendo a ordem."""
    try:
        sizes = [int(p) for p in str(text).split(",") if p.strip()]
    except ValueError as e:
        raise UsageError(f"--blocksizes inválido: {text}") from e
    if not sizes or min(sizes) < 1:
        raise UsageError("--blocksizes precisa de ao menos um inteiro ≥ 1")
    return list(dict.fromkeys(sizes))


def parse_patterns(text) -> list[str]:
    patterns = [p.strip() for p in str(text).split(",") if p.strip()]
    if not patterns:
        raise UsageError("--patterns vazio")
    return list(dict.fromkeys(patterns))


def sweep_model(manifest: ModelManifest, calib: np.ndarray, block_sizes, patterns,
                base: RunConfig, alpha: float | None = None, threads: int | None = None) -> list[SweepRow]:
    """
    Poda o mesmo modelo uma vez por (padrão, B) e devolve os totais de cada execução.
    `alpha` vale só para os padrões n:m.
    """
    if base.method not in SWEEP_METHODS:
        raise UsageError(f"a varredura de B só faz sentido para {', '.join(SWEEP_METHODS)}")
    if "structured" in patterns:
        raise UsageError("o padrão estruturado não tem tamanho de bloco")
    rows = []
    for pattern in patterns:
        for bsize in block_sizes:
            run = replace(base, pattern=pattern, block_size=int(bsize), mask_from="psi",
                          alpha=None if pattern == "unstructured" else alpha)
            result = PipelineService(run, threads=threads).prune_model(manifest, calib)
            t = emit_report(result.records)["totals"]
            rows.append(SweepRow(pattern=pattern, block_size=int(bsize), zeros=t["zeros"], cells=t["cells"],
                                 sparsity=t["sparsity"], loss_before=t["loss_before"],
                                 loss_after=t["loss_after"]))
            logger.info("varredura %s B=%d: perda %.6g", pattern, bsize, t["loss_after"])
    return rows


def sweep_to_frame(rows: list[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows], columns=list(SWEEP_FIELDS))


def format_sweep(rows: list[SweepRow]) -> str:
    df = sweep_to_frame(rows)
    return df.to_string(index=False) if not df.empty else "(nenhuma execução)"
