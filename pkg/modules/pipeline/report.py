# modules/pipeline/report.py

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Any, Iterable

import jsonschema
import pandas as pd

from utils.config import cfg
from utils.errors import DataError

LAYER_FIELDS = ("block", "layer", "method", "pattern", "rows", "cols", "zeros", "cells",
                "sparsity", "loss_before", "loss_after", "lambda_rel", "seconds")

_NUM = {"type": "number", "minimum": 0}
_COUNT = {"type": "integer", "minimum": 0}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version", "config", "layers", "totals"],
    "properties": {
        "schema_version": {"type": "integer", "minimum": 1},
        "config": {"type": "object"},
        "layers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(LAYER_FIELDS),
                "properties": {
                    "block": _COUNT, "layer": _COUNT, "method": {"type": "string"},
                    "pattern": {"type": "string"}, "rows": _COUNT, "cols": _COUNT,
                    "zeros": _COUNT, "cells": _COUNT,
                    "sparsity": {"type": "number", "minimum": 0, "maximum": 1},
                    "loss_before": _NUM, "loss_after": _NUM, "lambda_rel": _NUM, "seconds": _NUM,
                },
            },
        },
        "totals": {
            "type": "object",
            "required": ["layers", "zeros", "cells", "sparsity", "loss_before", "loss_after", "seconds"],
        },
    },
}


@dataclass
class LayerRecord:
    block: int
    layer: int
    method: str
    pattern: str
    rows: int
    cols: int
    zeros: int
    cells: int
    sparsity: float
    loss_before: float
    loss_after: float
    lambda_rel: float
    seconds: float

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in LAYER_FIELDS}


def _totals(layers: list[dict]) -> dict:
    zeros = sum(l["zeros"] for l in layers)
    cells = sum(l["cells"] for l in layers)
    return {
        "layers": len(layers),
        "zeros": zeros,
        "cells": cells,
        "sparsity": zeros / cells if cells else 0.0,
        "loss_before": sum(l["loss_before"] for l in layers),
        "loss_after": sum(l["loss_after"] for l in layers),
        "seconds": sum(l["seconds"] for l in layers),
    }


def emit_report(records: Iterable[LayerRecord | dict], config: dict[str, Any] | None = None) -> dict:
    """Monta o documento do relatório: versão, eco da config, camadas em ordem e totais."""
    layers = [r.to_json() if isinstance(r, LayerRecord) else {k: r[k] for k in LAYER_FIELDS}
              for r in records]
    layers.sort(key=lambda l: (l["block"], l["layer"]))
    return {
        "schema_version": cfg.report.schema_version,
        "config": dict(config or {}),
        "layers": layers,
        "totals": _totals(layers),
    }


def validate_report(doc: dict) -> None:
    try:
        jsonschema.validate(doc, REPORT_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "raiz"
        raise DataError(f"relatório inválido em {where}: {e.message}") from None


def dumps_report(doc: dict) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def write_report(doc: dict, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(doc))


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    validate_report(doc)
    return doc


def report_to_frame(doc: dict) -> pd.DataFrame:
    return pd.DataFrame(doc["layers"], columns=list(LAYER_FIELDS))


def format_report(doc: dict) -> str:
    df = report_to_frame(doc)
    t = doc["totals"]
    lines = []
    if doc.get("config"):
        lines.append("config: " + ", ".join(f"{k}={v}" for k, v in doc["config"].items()))
    lines.append(df.to_string(index=False) if not df.empty else "(nenhuma camada)")
    lines.append(
        f"total: {t['layers']} camadas, {t['zeros']}/{t['cells']} zeros "
        f"(esparsidade {t['sparsity']:.4f}), perda {t['loss_before']:.6g} -> {t['loss_after']:.6g}, "
        f"{t['seconds']:.3f}s"
    )
    return "\n".join(lines)
