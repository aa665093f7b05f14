# utils/config.py
import os

import toml

# Tenta ler o thanos.toml (ou o caminho em THANOS_CONFIG); se não existir, cai pro os.environ
_CONFIG_PATH_ENV = "THANOS_CONFIG"
_DEFAULT_CONFIG_PATH = "thanos.toml"

# cópia do arquivo já lido, por caminho; só relê após reload()
_FILES: dict[str, dict] = {}


def _load_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return dict(toml.load(fh))
    except (FileNotFoundError, IsADirectoryError):
        return {}
    except toml.TomlDecodeError as e:
        raise RuntimeError(f"Arquivo de configuração inválido ({path}): {e}") from e


def _file_data() -> dict:
    path = os.getenv(_CONFIG_PATH_ENV, _DEFAULT_CONFIG_PATH)
    if path not in _FILES:
        _FILES[path] = _load_file(path)
    return _FILES[path]


def _get(section: str, key: str, default=None):
    # Busca primeiro no arquivo [section] key
    data = _file_data()
    try:
        if section in data and key in data[section]:
            return data[section][key]
    except TypeError:
        pass
    # Fallback: ENV -> usa padrao SECTION_KEY
    env_key = f"{section}_{key}".upper()
    return os.getenv(env_key, default)


class _Thanos:
    @property
    def threads(self) -> int:
        n = int(_get("thanos", "threads", 0))
        return n if n > 0 else (os.cpu_count() or 1)
    @property
    def lambda_rel(self) -> float: return float(_get("thanos", "lambda_rel", 0.01))
    @property
    def batch_chunk(self) -> int: return int(_get("thanos", "batch_chunk", 256))
    @property
    def row_chunk(self) -> int: return int(_get("thanos", "row_chunk", 256))
    @property
    def singular_rcond(self) -> float: return float(_get("thanos", "singular_rcond", 1e-13))
    @property
    def damp_retries(self) -> int: return int(_get("thanos", "damp_retries", 3))
    @property
    def damp_growth(self) -> float: return float(_get("thanos", "damp_growth", 10.0))
    @property
    def block_size(self) -> int: return int(_get("thanos", "block_size", 128))
    @property
    def block_size_nm(self) -> int: return int(_get("thanos", "block_size_nm", 512))
    @property
    def alpha(self) -> float: return float(_get("thanos", "alpha", 0.1))


class _Gen:
    @property
    def samples(self) -> int: return int(_get("gen", "samples", 8))
    @property
    def tokens(self) -> int: return int(_get("gen", "tokens", 32))
    @property
    def seed(self) -> int: return int(_get("gen", "seed", 0))


class _Verify:
    @property
    def rows(self) -> int: return int(_get("verify", "rows", 4))
    @property
    def rtol(self) -> float: return float(_get("verify", "rtol", 1e-6))


class _Report:
    @property
    def schema_version(self) -> int: return int(_get("report", "schema_version", 1))
    @property
    def path(self) -> str: return str(_get("report", "path", "report.json"))


class Config:
    def __init__(self):
        self.thanos = _Thanos()
        self.gen = _Gen()
        self.verify = _Verify()
        self.report = _Report()

    def reload(self) -> None:
        """Descarta o arquivo em cache; a próxima leitura volta ao disco."""
        _FILES.clear()


cfg = Config()
