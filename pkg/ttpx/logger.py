import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from termcolor import colored
from tqdm import tqdm

from ttpx.utils import strip_ansi

# Attributes every LogRecord has; anything else came in through `extra=`.
_RESERVED_RECORD_ATTRS = set(
    logging.LogRecord("", 0, "", 0, "", (), None).__dict__.keys()
) | {"message", "asctime"}

_LEVEL_COLORS = {
    "DEBUG": "blue",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "red",
}


class TqdmLoggingHandler(logging.Handler):

    def emit(self, record):
        try:
            msg = self.format(record)
            tqdm.write(msg, file=sys.stderr)
            self.flush()
        except (KeyboardInterrupt, SystemExit):
            raise
        except Exception:
            self.handleError(record)


class StripAnsiFormatter(logging.Formatter):

    def format(self, record):
        msg = super().format(record)
        return strip_ansi(msg)


class JsonLinesFormatter(logging.Formatter):
    """One JSON object per record. Fields passed with `extra=` are kept."""

    def format(self, record):
        payload = {
            "ts": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "msg": strip_ansi(record.getMessage()),
        }
        for key, value in record.__dict__.items():
            if key not in _RESERVED_RECORD_ATTRS and not key.startswith("_"):
                payload[key] = value
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True, default=str)


class HumanFormatter(logging.Formatter):

    def format(self, record):
        level = colored(f"{record.levelname:<8}", _LEVEL_COLORS.get(record.levelname))
        return f"[{record.name:<12}] {level} {record.getMessage()}"


class TTPXLogger(logging.Logger):

    def __init__(
        self,
        name: str,
        log_dir: str | None = None,
        level: str | int = logging.INFO,
        mode: str = "a",
        structured: bool = False,
    ):
        super().__init__(name)
        self.setLevel(logging.DEBUG)
        self.log_file = None

        # If var env "TTPX_DEBUG" is set, turn on debug mode
        if os.environ.get("TTPX_DEBUG"):
            level = logging.DEBUG

        console = TqdmLoggingHandler()
        console.setFormatter(JsonLinesFormatter() if structured else HumanFormatter())
        console.setLevel(level)
        self.addHandler(console)

        if log_dir:
            log_dir = Path(log_dir)
            log_dir.mkdir(parents=True, exist_ok=True)

            self.log_file = log_dir / f"{name}.log"
            fh = logging.FileHandler(self.log_file, mode=mode)
            formatter = StripAnsiFormatter("%(asctime)s %(levelname)-8s %(message)s")
            fh.setFormatter(formatter)
            fh.setLevel(logging.DEBUG)
            self.addHandler(fh)

        # Prevent the log messages from being propagated to the root logger
        self.propagate = False

    def tqdm(self, iterable, desc=None, *args, **kwargs):
        desc = desc or f"  [{self.name:12s}]"
        kwargs.pop("leave", None)
        yield from tqdm(iterable, desc=desc, *args, **kwargs, leave=False)
