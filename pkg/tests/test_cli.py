import json
import time

import numpy as np
import pytest

from cli import cli_main
from modules.pipeline.report import read_report, validate_report
from modules.pipeline.tensor_io import load_tensor, save_tensor


@pytest.fixture
def toy(tmp_path):
    out = tmp_path / "toy"
    assert cli_main(["gen", "--out", str(out), "--blocks", "2", "--layers", "2", "--dims", "64", "--seed", "7"]) == 0
    return out


def _prune(toy, out, *extra):
    return cli_main(["prune", "--model", str(toy / "manifest.json"), "--calib", str(toy / "calib.thns"),
                     "--out", str(out), *extra])


def test_sem_model_sai_com_1(tmp_path, capsys):
    assert cli_main(["prune", "--calib", str(tmp_path / "c.thns")]) == 1
    assert "--model" in capsys.readouterr().err


def test_flag_desconhecida_mostra_uso(capsys):
    assert cli_main(["prune", "--nao-existe"]) == 1
    assert "Usage" in capsys.readouterr().err


def test_arquivo_ausente_e_erro_de_dados(tmp_path):
    assert cli_main(["prune", "--model", str(tmp_path / "x.json"), "--calib", str(tmp_path / "c.thns")]) == 2


def test_calibracao_corrompida_e_erro_de_dados(toy, tmp_path, capsys):
    (tmp_path / "bad.thns").write_bytes(b"XXXX")
    code = cli_main(["prune", "--model", str(toy / "manifest.json"), "--calib", str(tmp_path / "bad.thns")])
    assert code == 2
    assert "THNS" in capsys.readouterr().err


def test_alpha_sem_outliers_e_erro_de_uso(toy, tmp_path):
    assert _prune(toy, tmp_path / "o", "--alpha", "0.1") == 1


def test_smoke_thanos(toy, tmp_path):
    assert _prune(toy, tmp_path / "o", "--method", "thanos", "--sparsity", "0.5", "--blocksize", "128") == 0
    doc = read_report(tmp_path / "o" / "report.json")
    assert doc["totals"]["layers"] == 4
    assert doc["totals"]["sparsity"] == pytest.approx(0.5)


def test_2_4_com_outliers(toy, tmp_path):
    assert _prune(toy, tmp_path / "o", "--method", "thanos", "--pattern", "2:4", "--alpha", "0.1") == 0
    doc = read_report(tmp_path / "o" / "report.json")
    # 64 linhas: ⌈6.4⌉ = 7 outliers por camada
    assert doc["totals"]["sparsity"] == pytest.approx(0.5 * 0.9, abs=1 / 64)
    assert doc["config"]["alpha"] == 0.1


def test_quatro_metodos_e_mascara_do_wanda(toy, tmp_path):
    t0 = time.perf_counter()
    docs = {}
    for method in ("magnitude", "wanda", "sparsegpt", "thanos"):
        out = tmp_path / method
        assert _prune(toy, out, "--method", method, "--sparsity", "0.5") == 0
        docs[method] = read_report(out / "report.json")
    assert _prune(toy, tmp_path / "tw", "--method", "thanos", "--sparsity", "0.5", "--mask-from", "wanda") == 0
    injected = read_report(tmp_path / "tw" / "report.json")
    assert time.perf_counter() - t0 < 30

    wanda = docs["wanda"]
    # mesmas entradas no primeiro bloco: comparação camada a camada
    for a, b in zip(injected["layers"][:2], wanda["layers"][:2]):
        assert a["zeros"] >= b["zeros"]
        assert a["loss_after"] <= b["loss_after"] + 1e-9
    assert injected["totals"]["loss_after"] <= injected["totals"]["loss_before"] + 1e-9
    for doc in docs.values():
        validate_report(doc)


def test_execucoes_identicas_geram_bytes_identicos(toy, tmp_path):
    for name in ("a", "b"):
        assert _prune(toy, tmp_path / name, "--method", "thanos", "--sparsity", "0.5") == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "report.json" in files and "manifest.json" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_verify_e_report(toy, tmp_path, capsys):
    out = tmp_path / "o"
    assert _prune(toy, out, "--method", "sparsegpt", "--sparsity", "0.5") == 0
    args = ["verify", "--model", str(toy / "manifest.json"), "--pruned", str(out / "manifest.json"),
            "--calib", str(toy / "calib.thns"), "--report", str(out / "report.json")]
    assert cli_main(args) == 0
    assert cli_main(["report", str(out / "report.json"), "--csv", str(tmp_path / "r.csv")]) == 0
    printed = capsys.readouterr().out
    assert "esparsidade" in printed
    assert len((tmp_path / "r.csv").read_text(encoding="utf-8").strip().splitlines()) == 1 + 4


def test_verify_detecta_adulteracao(toy, tmp_path):
    out = tmp_path / "o"
    assert _prune(toy, out, "--method", "thanos", "--sparsity", "0.5") == 0
    path = out / "block0_layer0.thns"
    w = load_tensor(path)
    w[w == 0.0] = 1.0
    save_tensor(path, w)
    args = ["verify", "--model", str(toy / "manifest.json"), "--pruned", str(out / "manifest.json"),
            "--calib", str(toy / "calib.thns"), "--report", str(out / "report.json")]
    assert cli_main(args) == 3


def test_report_invalido(tmp_path):
    (tmp_path / "r.json").write_text(json.dumps({"layers": []}), encoding="utf-8")
    assert cli_main(["report", str(tmp_path / "r.json")]) == 2


def test_timing_so_quando_pedido(toy, tmp_path):
    assert _prune(toy, tmp_path / "t", "--method", "wanda", "--timing") == 0
    assert _prune(toy, tmp_path / "n", "--method", "wanda", "--no-timing") == 0
    timed = read_report(tmp_path / "t" / "report.json")
    plain = read_report(tmp_path / "n" / "report.json")
    assert sum(layer["seconds"] for layer in timed["layers"]) > 0.0
    assert all(layer["seconds"] == 0.0 for layer in plain["layers"])


def test_sweep_imprime_e_grava_csv(toy, tmp_path, capsys):
    csv_path = tmp_path / "sweep.csv"
    code = cli_main(["sweep", "--model", str(toy / "manifest.json"), "--calib", str(toy / "calib.thns"),
                     "--blocksizes", "16,64", "--patterns", "unstructured,4:8", "--csv", str(csv_path)])
    assert code == 0
    assert "block_size" in capsys.readouterr().out
    lines = csv_path.read_text(encoding="utf-8").strip().splitlines()
    assert len(lines) == 1 + 2 * 2
    assert lines[0] == "pattern,block_size,zeros,cells,sparsity,loss_before,loss_after"


def test_sweep_estruturado_e_erro_de_uso(toy):
    code = cli_main(["sweep", "--model", str(toy / "manifest.json"), "--calib", str(toy / "calib.thns"),
                     "--patterns", "structured"])
    assert code == 1
