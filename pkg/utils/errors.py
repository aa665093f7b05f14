# utils/errors.py
from __future__ import annotations

import json
from typing import Any

import click


class ThanosError(Exception):
    """
    Base de todos os erros do toolkit. Cada subclasse define o código de saída da CLI,
    um título curto e (opcional) uma dica de ação.
    """
    exit_code = 2
    title = "Erro"
    suggestion: str | None = None

    def __init__(self, message: str, *, details: dict[str, Any] | None = None, suggestion: str | None = None):
        super().__init__(message)
        self.message = message
        self.details = details
        if suggestion is not None:
            self.suggestion = suggestion


# ---------- uso (exit 1) ----------

class UsageError(ThanosError):
    exit_code = 1
    title = "Parâmetros inválidos"
    suggestion = "Revise as flags da linha de comando (use --help)."


# ---------- dados (exit 2) ----------

class DataError(ThanosError):
    exit_code = 2
    title = "Dados inválidos"


class DimensionMismatchError(DataError):
    title = "Dimensões incompatíveis"

    def __init__(self, message: str, *shapes: tuple[int, ...]):
        super().__init__(f"{message} (formas: {', '.join(str(tuple(s)) for s in shapes)})",
                         details={"shapes": [list(s) for s in shapes]})
        self.shapes = shapes


class NonFiniteError(DataError):
    title = "Valores não finitos"
    suggestion = "Remova NaN/Inf dos tensores de entrada."


class TensorFormatError(DataError):
    """Arquivo de tensor corrompido; `code` distingue a causa."""
    title = "Arquivo de tensor inválido"
    CODES = ("bad_magic", "bad_version", "bad_rank", "bad_dtype", "truncated")

    def __init__(self, code: str, message: str):
        assert code in self.CODES, code
        super().__init__(message, details={"code": code})
        self.code = code


class ManifestError(DataError):
    title = "Manifesto do modelo inválido"
    suggestion = "Confira input_dim, a ordem dos blocos e as dimensões de cada camada."


class BudgetError(DataError):
    title = "Orçamento de poda inviável"


class SearchTooLargeError(DataError):
    title = "Busca exaustiva grande demais"
    suggestion = "Use instâncias minúsculas no oráculo."


# ---------- numéricos (exit 3) ----------

class NumericalError(ThanosError):
    exit_code = 3
    title = "Falha numérica"
    suggestion = "Aumente o amortecimento (--damp / lambda_rel) e tente novamente."


class NotPositiveDefiniteError(NumericalError):
    title = "Matriz não é definida positiva"

    def __init__(self, pivot: int, message: str | None = None):
        super().__init__(message or f"Cholesky falhou no pivô {pivot}", details={"pivot": pivot})
        self.pivot = pivot


class SingularSystemError(NumericalError):
    title = "Sistema linear singular"

    def __init__(self, batch_index: int, message: str | None = None):
        super().__init__(message or f"Sistema {batch_index} do lote é singular",
                         details={"batch_index": batch_index})
        self.batch_index = batch_index


class DegenerateInverseError(NumericalError):
    title = "Inversa da Hessiana degenerada"


class VerificationError(NumericalError):
    title = "Verificação falhou"
    suggestion = None


def _try_json(text: str):
    try:
        return json.loads(text)
    except Exception:
        return text


def parse_error(err: Exception) -> dict:
    """
    Normaliza qualquer exceção para o formato exibido na CLI e na UI.
    Retorna dict com: {exit_code, title, message, details, suggestion}
    """
    # Caso 1: nossos erros
    if isinstance(err, ThanosError):
        return {
            "exit_code": err.exit_code,
            "title": err.title,
            "message": err.message,
            "details": err.details,
            "suggestion": err.suggestion,
        }

    # Caso 2: erros de uso do click
    if isinstance(err, click.UsageError):
        return {"exit_code": 1, "title": UsageError.title, "message": err.format_message(),
                "details": None, "suggestion": UsageError.suggestion}

    # Caso 3: arquivo ausente / JSON quebrado são problemas de dados
    if isinstance(err, (FileNotFoundError, json.JSONDecodeError)):
        return {"exit_code": 2, "title": DataError.title, "message": str(err), "details": None, "suggestion": None}

    # Fallback: string do erro (com JSON embutido, se houver)
    body = _try_json(str(err))
    return {"exit_code": 2, "title": "Erro", "message": str(err),
            "details": body if isinstance(body, dict) else None, "suggestion": None}


def render_error(err: Exception, *, context: str | None = None, show_details: bool = False) -> int:
    """
    Mostra o erro no stderr + dica + (opcional) detalhes técnicos. Retorna o código de saída.
    """
    info = parse_error(err)
    prefix = f"❌ {context}: " if context else "❌ "
    click.secho(f"{prefix}{info['title']}: {info['message']}", err=True, fg="red")
    if info.get("suggestion"):
        click.echo(f"💡 {info['suggestion']}", err=True)
    if show_details and info.get("details") is not None:
        click.echo(json.dumps(info["details"], indent=2, ensure_ascii=False), err=True)
    return info["exit_code"]
