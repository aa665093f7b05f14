from streamlit.testing.v1 import AppTest

from modules.pipeline.report import LayerRecord, emit_report, write_report


def test_app_abre_sem_relatorio():
    at = AppTest.from_file("../app.py").run()
    assert not at.exception
    assert any(t.value.endswith("Relatório de poda") for t in at.title)
    assert len(at.info) == 1


def test_app_mostra_totais(tmp_path):
    rec = LayerRecord(block=0, layer=0, method="thanos", pattern="unstructured", rows=4, cols=8, zeros=16,
                      cells=32, sparsity=0.5, loss_before=2.0, loss_after=1.0, lambda_rel=0.01, seconds=0.1)
    path = tmp_path / "report.json"
    write_report(emit_report([rec], {"method": "thanos"}), path)
    at = AppTest.from_file("../app.py").run()
    at.text_input[0].input(str(path)).run()
    assert not at.exception
    assert len(at.error) == 0
    assert [m.label for m in at.metric] == ["Camadas", "Esparsidade global", "Perda (só zerar)", "Perda final"]
    assert at.metric[1].value == "0.5000"


def test_app_relatorio_invalido(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"layers": []}', encoding="utf-8")
    at = AppTest.from_file("../app.py").run()
    at.text_input[0].input(str(path)).run()
    assert len(at.error) == 1
