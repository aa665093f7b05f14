import pytest

from utils.config import cfg


def test_padroes_sem_arquivo():
    assert cfg.thanos.lambda_rel == pytest.approx(0.01)
    assert cfg.thanos.block_size == 128
    assert cfg.gen.samples == 8


def test_arquivo_lido_uma_vez(tmp_path, monkeypatch):
    path = tmp_path / "thanos.toml"
    path.write_text("[thanos]\nlambda_rel = 0.05\nblock_size = 32\n", encoding="utf-8")
    monkeypatch.setenv("THANOS_CONFIG", str(path))
    assert cfg.thanos.lambda_rel == pytest.approx(0.05)

    path.write_text("[thanos]\nlambda_rel = 0.5\n", encoding="utf-8")
    assert cfg.thanos.lambda_rel == pytest.approx(0.05)
    assert cfg.thanos.block_size == 32

    cfg.reload()
    assert cfg.thanos.lambda_rel == pytest.approx(0.5)
    assert cfg.thanos.block_size == 128


def test_env_vale_quando_o_arquivo_nao_tem_a_chave(tmp_path, monkeypatch):
    path = tmp_path / "outro.toml"
    path.write_text("[gen]\nseed = 3\n", encoding="utf-8")
    monkeypatch.setenv("THANOS_CONFIG", str(path))
    monkeypatch.setenv("THANOS_ROW_CHUNK", "17")
    assert cfg.gen.seed == 3
    assert cfg.thanos.row_chunk == 17


def test_toml_invalido(tmp_path, monkeypatch):
    path = tmp_path / "ruim.toml"
    path.write_text("[thanos\n", encoding="utf-8")
    monkeypatch.setenv("THANOS_CONFIG", str(path))
    with pytest.raises(RuntimeError):
        cfg.thanos.alpha
