# utils/log.py
import logging

_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbosity: int = 0, log_file: str | None = None) -> None:
    """0 = WARNING, 1 = INFO, 2+ = DEBUG. Stream no stderr e, se pedido, arquivo."""
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=level, format=_FORMAT, handlers=handlers, force=True)
