# modules/pipeline/manifest.py

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from modules.pipeline.tensor_io import read_tensor, save_tensor
from utils.errors import ManifestError

ACTIVATIONS = ("identity", "relu")
MANIFEST_VERSION = 1

# Mesmo conteúdo de docs/manifest_schema.json
MANIFEST_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "Thanos toy model manifest",
    "type": "object",
    "required": ["version", "input_dim", "blocks"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": MANIFEST_VERSION},
        "input_dim": {"type": "integer", "minimum": 1},
        "blocks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "required": ["weights", "activation"],
                    "additionalProperties": False,
                    "properties": {
                        "weights": {"type": "string", "minLength": 1},
                        "activation": {"enum": list(ACTIVATIONS)},
                    },
                },
            },
        },
    },
}


@dataclass
class LayerSpec:
    weights: str          # caminho como escrito no manifesto
    activation: str
    matrix: np.ndarray | None = field(default=None, repr=False)
    dtype_code: int = 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        """x: d×b×a (ou b×a) -> W·x com a ativação declarada."""
        y = self.matrix @ x
        return np.maximum(y, 0.0) if self.activation == "relu" else y


@dataclass
class ModelManifest:
    input_dim: int
    blocks: list[list[LayerSpec]]
    root: str = "."

    def layers(self):
        for bi, block in enumerate(self.blocks):
            for li, layer in enumerate(block):
                yield bi, li, layer

    def to_json(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "input_dim": self.input_dim,
            "blocks": [[{"weights": l.weights, "activation": l.activation} for l in block]
                       for block in self.blocks],
        }


def validate_manifest_doc(doc: dict) -> None:
    try:
        jsonschema.validate(doc, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "raiz"
        raise ManifestError(f"manifesto fora do schema em {where}: {e.message}") from None


def check_chain(manifest: ModelManifest) -> None:
    """Cada camada consome a saída da anterior; o primeiro bloco consome input_dim."""
    width = manifest.input_dim
    for bi, li, layer in manifest.layers():
        rows, cols = layer.matrix.shape
        if cols != width:
            raise ManifestError(
                f"bloco {bi}, camada {li}: pesos {rows}×{cols} esperavam {width} colunas",
                details={"block": bi, "layer": li, "shape": [rows, cols], "expected_cols": width},
            )
        width = rows


def load_manifest(path) -> ModelManifest:
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    validate_manifest_doc(doc)
    root = os.path.dirname(os.path.abspath(path))
    blocks = []
    for bi, block in enumerate(doc["blocks"]):
        layers = []
        for li, item in enumerate(block):
            wpath = os.path.join(root, item["weights"])
            if not os.path.exists(wpath):
                raise ManifestError(f"bloco {bi}, camada {li}: arquivo de pesos ausente ({item['weights']})",
                                    details={"block": bi, "layer": li})
            arr, code = read_tensor(wpath)
            if arr.ndim != 2:
                raise ManifestError(f"bloco {bi}, camada {li}: pesos precisam ser 2-D",
                                    details={"block": bi, "layer": li})
            layers.append(LayerSpec(item["weights"], item["activation"], arr, code))
        blocks.append(layers)
    manifest = ModelManifest(int(doc["input_dim"]), blocks, root)
    check_chain(manifest)
    return manifest


def layer_filename(bi: int, li: int) -> str:
    return f"block{bi}_layer{li}.thns"


def save_manifest(manifest: ModelManifest, out_dir) -> str:
    """Grava os pesos (no dtype de origem) e o manifest.json em `out_dir`."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    for bi, li, layer in manifest.layers():
        layer.weights = layer_filename(bi, li)
        save_tensor(os.path.join(out_dir, layer.weights), layer.matrix, layer.dtype_code)
    manifest.root = out_dir
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=2)
        fh.write("\n")
    return path
