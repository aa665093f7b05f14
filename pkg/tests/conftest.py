import os

import numpy as np
import pytest

from modules.calibration.service import CalibrationSet


@pytest.fixture(autouse=True, scope="session")
def _sem_arquivo_de_config(tmp_path_factory):
    # nenhum thanos.toml local interfere nos testes
    old = os.environ.get("THANOS_CONFIG")
    os.environ["THANOS_CONFIG"] = str(tmp_path_factory.mktemp("cfg") / "ausente.toml")
    yield
    if old is None:
        os.environ.pop("THANOS_CONFIG", None)
    else:
        os.environ["THANOS_CONFIG"] = old


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture
def make_layer(rng):
    """Fábrica de (W c×b, calibração d×b×a) aleatórios."""
    def _make(c=6, b=8, a=12, d=2):
        w = rng.standard_normal((c, b))
        cal = CalibrationSet(rng.standard_normal((d, b, a)))
        return w, cal
    return _make


@pytest.fixture
def grade_exemplo():
    # W e X cuja grade |W_ij|·‖X_j:‖ é [[15, 2], [10, 4], [5, 6]]
    w = np.array([[3.0, -2.0], [-2.0, 4.0], [1.0, -6.0]])
    cal = CalibrationSet(np.array([[4.0, 3.0], [0.0, 1.0]]))
    return w, cal
