# modules/pipeline/service.py

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from modules.baselines.service import BaselineService, PruneOutcome
from modules.calibration.service import CalibrationSet, reconstruction_loss, row_norms
from modules.masks.service import SparsityTarget, wanda_rowwise_mask
from modules.oracle.service import constrained_lsq, loss_eval
from modules.pipeline.manifest import LayerSpec, ModelManifest, load_manifest, save_manifest
from modules.pipeline.report import LayerRecord, emit_report, read_report, write_report
from modules.pipeline.tensor_io import load_tensor, save_tensor
from modules.thanos.service import ThanosConfig, ThanosService
from utils.config import cfg
from utils.errors import (
    DataError,
    DimensionMismatchError,
    NumericalError,
    ThanosError,
    UsageError,
    VerificationError,
)

logger = logging.getLogger(__name__)

METHODS = ("magnitude", "wanda", "sparsegpt", "thanos")
MASK_SOURCES = ("psi", "wanda")
LAMBDA_FLOOR = 1e-4


@dataclass(frozen=True)
class RunConfig:
    method: str = "thanos"
    sparsity: float = 0.5
    pattern: str = "unstructured"   # unstructured | n:m | structured
    block_size: int | None = None
    mask_block_size: int | None = None
    alpha: float | None = None
    lambda_rel: float | None = None
    seed: int = 0
    row_chunk: int | None = None
    mask_from: str = "psi"
    timing: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"método desconhecido: {self.method} (opções: {', '.join(METHODS)})")
        if self.mask_from not in MASK_SOURCES:
            raise UsageError(f"--mask-from aceita {', '.join(MASK_SOURCES)}")
        if not 0 <= self.seed < 2 ** 64:
            raise UsageError("seed precisa caber em 64 bits sem sinal")
        target = self.target  # valida o padrão
        if self.pattern == "structured" and self.method != "thanos":
            raise UsageError("padrão estruturado só existe para --method thanos")
        if self.pattern != "unstructured" and self.mask_from != "psi":
            raise UsageError("--mask-from só vale para thanos não estruturado")
        if self.mask_from != "psi" and self.method != "thanos":
            raise UsageError("--mask-from só vale para --method thanos")
        if self.alpha is not None and not self.has_outliers:
            raise UsageError("alpha só tem efeito em thanos com padrão n:m ou estruturado")
        if self.alpha is not None and not 0.0 <= self.alpha < 1.0:
            raise UsageError(f"alpha={self.alpha} fora de [0, 1)")
        for name in ("block_size", "mask_block_size", "row_chunk"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise UsageError(f"{name} precisa ser ≥ 1")
        if self.lambda_rel is not None and self.lambda_rel < 0:
            raise UsageError("--damp precisa ser ≥ 0")

    @property
    def target(self) -> SparsityTarget:
        if self.pattern in ("unstructured", "structured"):
            return SparsityTarget(ratio=self.sparsity)
        if ":" not in self.pattern:
            raise UsageError(f"padrão desconhecido: {self.pattern} (use unstructured, structured ou n:m)")
        return SparsityTarget.parse(self.pattern)

    @property
    def has_outliers(self) -> bool:
        return self.method == "thanos" and self.pattern != "unstructured"

    @property
    def effective_alpha(self) -> float:
        if not self.has_outliers:
            return 0.0
        return cfg.thanos.alpha if self.alpha is None else self.alpha

    @property
    def effective_lambda(self) -> float:
        return cfg.thanos.lambda_rel if self.lambda_rel is None else self.lambda_rel

    def thanos_config(self) -> ThanosConfig:
        target = self.target
        pattern = "nm" if target.is_nm else self.pattern
        return ThanosConfig.from_cfg(
            pattern=pattern, block_size=self.block_size, sparsity=target.density_removed if not target.is_nm else 0.0,
            n=target.n or 2, m=target.m or 4, alpha=self.effective_alpha,
            lambda_rel=self.effective_lambda, row_chunk=self.row_chunk,
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "sparsity": self.target.density_removed,
            "pattern": self.pattern,
            "block_size": self.block_size,
            "mask_block_size": self.mask_block_size,
            "alpha": self.effective_alpha,
            "lambda_rel": self.effective_lambda,
            "seed": self.seed,
            "row_chunk": self.row_chunk,
            "mask_from": self.mask_from,
        }


def prune_layer(w: np.ndarray, cal: CalibrationSet, run: RunConfig) -> PruneOutcome:
    """Despacha para o podador certo conforme método e padrão."""
    target = run.target
    if run.method != "thanos":
        service = BaselineService(run.method, block_size=run.block_size, mask_block_size=run.mask_block_size,
                                  lambda_rel=run.effective_lambda)
        return service.prune(w, cal, target)
    mask = wanda_rowwise_mask(w, row_norms(cal), target.ratio) if run.mask_from == "wanda" else None
    return ThanosService(run.thanos_config()).prune(w, cal, mask=mask)


@dataclass
class PipelineResult:
    manifest: ModelManifest
    records: list[LayerRecord]
    # entrada de calibração de cada bloco (d×b×a), já após a poda dos blocos anteriores
    block_inputs: list[np.ndarray] = field(default_factory=list)


def forward_block(block: list[LayerSpec], x: np.ndarray) -> np.ndarray:
    for layer in block:
        x = layer.forward(x)
    return x


def capture_inputs(block: list[LayerSpec], x: np.ndarray) -> list[np.ndarray]:
    """Entradas de cada camada do bloco numa única passada pelo bloco ainda sem poda."""
    inputs = []
    for layer in block:
        inputs.append(x)
        x = layer.forward(x)
    return inputs


class PipelineService:
    def __init__(self, run: RunConfig, threads: int | None = None):
        self.run = run
        self.threads = threads or cfg.thanos.threads

    def _prune_with_retry(self, w: np.ndarray, cal: CalibrationSet, where: str) -> tuple[PruneOutcome, float]:
        lam_rel = self.run.effective_lambda
        outcome = None
        for attempt in Retrying(stop=stop_after_attempt(1 + cfg.thanos.damp_retries),
                                retry=retry_if_exception_type(NumericalError), reraise=True):
            with attempt:
                if attempt.retry_state.attempt_number > 1:
                    lam_rel = max(lam_rel * cfg.thanos.damp_growth, LAMBDA_FLOOR)
                    logger.warning("%s: falha numérica, tentando de novo com lambda_rel=%g", where, lam_rel)
                outcome = prune_layer(w, cal, replace(self.run, lambda_rel=lam_rel))
        return outcome, lam_rel

    def _prune_one(self, bi: int, li: int, layer: LayerSpec, x: np.ndarray) -> tuple[LayerSpec, LayerRecord]:
        where = f"bloco {bi}, camada {li}"
        t0 = time.perf_counter()
        try:
            outcome, lam_rel = self._prune_with_retry(layer.matrix, CalibrationSet(x), where)
        except ThanosError as e:
            e.message = f"{where}: {e.message}"
            e.details = {**(e.details or {}), "block": bi, "layer": li}
            raise
        seconds = time.perf_counter() - t0 if self.run.timing else 0.0
        rows, cols = outcome.pruned.shape
        record = LayerRecord(
            block=bi, layer=li, method=outcome.method, pattern=self.run.pattern,
            rows=rows, cols=cols, zeros=outcome.zeros, cells=rows * cols, sparsity=outcome.sparsity,
            loss_before=float(outcome.loss_before), loss_after=float(outcome.loss_after),
            lambda_rel=lam_rel, seconds=seconds,
        )
        logger.info("%s: %s, %d zeros, perda %.6g -> %.6g (%.3fs)", where, outcome.method,
                    record.zeros, record.loss_before, record.loss_after, seconds)
        return LayerSpec(layer.weights, layer.activation, outcome.pruned, layer.dtype_code), record

    def prune_model(self, manifest: ModelManifest, calib: np.ndarray) -> PipelineResult:
        """
        Bloco a bloco: captura as entradas das camadas com o bloco original, poda cada
        camada (em paralelo dentro do bloco) e propaga pelo bloco JÁ podado para obter
        a calibração do próximo bloco.
        """
        x = np.asarray(calib, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise DimensionMismatchError("calibração precisa ser d×b×a", x.shape)
        if x.shape[1] != manifest.input_dim:
            raise DimensionMismatchError("b da calibração != input_dim do modelo",
                                         x.shape, (manifest.input_dim,))
        blocks, records, block_inputs = [], [], []
        for bi, block in enumerate(manifest.blocks):
            block_inputs.append(x)
            inputs = capture_inputs(block, x)
            jobs = [(bi, li, layer, inputs[li]) for li, layer in enumerate(block)]
            if self.threads > 1 and len(jobs) > 1:
                with ThreadPoolExecutor(max_workers=min(self.threads, len(jobs))) as pool:
                    done = list(pool.map(lambda j: self._prune_one(*j), jobs))
            else:
                done = [self._prune_one(*j) for j in jobs]
            pruned_block = [spec for spec, _ in done]
            records.extend(rec for _, rec in done)
            blocks.append(pruned_block)
            x = forward_block(pruned_block, x)
        pruned = ModelManifest(manifest.input_dim, blocks, manifest.root)
        return PipelineResult(pruned, records, block_inputs)

    def run_files(self, model_path, calib_path, out_dir, report_path=None) -> dict:
        """Lê manifesto + calibração, poda, grava os tensores/manifesto e o relatório."""
        manifest = load_manifest(model_path)
        calib = load_tensor(calib_path)
        result = self.prune_model(manifest, calib)
        save_manifest(result.manifest, out_dir)
        doc = emit_report(result.records, self.run.to_json())
        write_report(doc, report_path or os.path.join(out_dir, "report.json"))
        return doc


# ---------- gen ----------

def parse_dims(dims, blocks: int, layers: int) -> list[int]:
    """'64' -> todas as larguras iguais; '64,32,...' -> input_dim + saída de cada camada."""
    parts = [int(p) for p in str(dims).split(",") if p.strip()]
    need = blocks * layers + 1
    if len(parts) == 1:
        parts = parts * need
    if len(parts) != need or min(parts) < 1:
        raise UsageError(f"--dims precisa de 1 ou {need} larguras positivas")
    return parts


def gen_model(out_dir, blocks: int, layers: int, dims, samples: int | None = None,
              seed: int | None = None, tokens: int | None = None) -> tuple[str, str]:
    """Gera um modelo de brinquedo (relu entre camadas, identidade no fim do bloco) e a calibração."""
    if blocks < 1 or layers < 1:
        raise UsageError("--blocks e --layers precisam ser ≥ 1")
    samples = cfg.gen.samples if samples is None else samples
    tokens = cfg.gen.tokens if tokens is None else tokens
    seed = cfg.gen.seed if seed is None else seed
    if samples < 1 or tokens < 1:
        raise UsageError("--samples e tokens precisam ser ≥ 1")
    widths = parse_dims(dims, blocks, layers)
    rng = np.random.default_rng(seed)
    specs, k = [], 0
    for bi in range(blocks):
        block = []
        for li in range(layers):
            w = rng.standard_normal((widths[k + 1], widths[k])) / np.sqrt(widths[k])
            block.append(LayerSpec("", "identity" if li == layers - 1 else "relu", w, 1))
            k += 1
        specs.append(block)
    calib = rng.standard_normal((samples, widths[0], tokens))
    model_path = save_manifest(ModelManifest(widths[0], specs), out_dir)
    calib_path = os.path.join(os.fspath(out_dir), "calib.thns")
    save_tensor(calib_path, calib, 1)
    logger.info("modelo gerado em %s (%d blocos × %d camadas)", out_dir, blocks, layers)
    return model_path, calib_path


# ---------- verify ----------

@dataclass
class LayerCheck:
    block: int
    layer: int
    name: str
    ok: bool
    detail: str = ""


def verify_model(model_path, pruned_path, calib_path, report_path=None, rows: int | None = None,
                 rtol: float | None = None, seed: int = 0) -> list[LayerCheck]:
    """
    Refaz as entradas de calibração como o pipeline fez e confere, por camada: zeros
    exatos, perda do relatório (se dado) e, em linhas sorteadas, que o oráculo de
    mínimos quadrados restritos não acha perda menor que a realizada.
    """
    rows = cfg.verify.rows if rows is None else rows
    rtol = cfg.verify.rtol if rtol is None else rtol
    original = load_manifest(model_path)
    pruned = load_manifest(pruned_path)
    shape_a = [[l.matrix.shape for l in b] for b in original.blocks]
    shape_b = [[l.matrix.shape for l in b] for b in pruned.blocks]
    if shape_a != shape_b:
        raise DataError("modelo podado não tem a mesma arquitetura do original")
    report = read_report(report_path) if report_path else None
    reported = {(l["block"], l["layer"]): l for l in report["layers"]} if report else {}
    rng = np.random.default_rng(seed)

    x = load_tensor(calib_path)
    if x.ndim == 2:
        x = x[None]
    checks: list[LayerCheck] = []
    for bi, block in enumerate(original.blocks):
        inputs = capture_inputs(block, x)
        for li, layer in enumerate(block):
            w, wp = layer.matrix, pruned.blocks[bi][li].matrix
            cal = CalibrationSet(inputs[li])
            zeros = int(np.count_nonzero(wp == 0.0))
            loss = reconstruction_loss(wp - w, cal)
            rec = reported.get((bi, li))
            if rec is not None:
                ok = rec["zeros"] == zeros and np.isclose(rec["loss_after"], loss, rtol=rtol, atol=1e-12)
                checks.append(LayerCheck(bi, li, "report", bool(ok),
                                         f"zeros {rec['zeros']}/{zeros}, perda {rec['loss_after']:.6g}/{loss:.6g}"))
            picked = rng.choice(w.shape[0], size=min(rows, w.shape[0]), replace=False)
            for i in sorted(int(i) for i in picked):
                q = np.flatnonzero(wp[i] == 0.0)
                if q.size == 0:
                    continue
                realized = loss_eval(wp[i] - w[i], cal)
                best = loss_eval(constrained_lsq(w[i], q, cal), cal)
                ok = best <= realized * (1.0 + rtol) + 1e-12
                checks.append(LayerCheck(bi, li, f"oracle[{i}]", bool(ok),
                                         f"oráculo {best:.6g} ≤ realizado {realized:.6g}"))
        x = forward_block(pruned.blocks[bi], x)
    failed = [c for c in checks if not c.ok]
    if failed:
        first = failed[0]
        raise VerificationError(
            f"{len(failed)} verificação(ões) falharam; primeira: bloco {first.block}, camada {first.layer}, "
            f"{first.name} ({first.detail})",
            details={"failed": [c.__dict__ for c in failed]},
        )
    return checks
