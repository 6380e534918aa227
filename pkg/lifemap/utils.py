import hashlib
import importlib
import os
import sys
import time
import types
import typing
from datetime import datetime, timezone
from inspect import getmembers, getmodule
from pathlib import Path

import numpy as np
from loguru import logger

import lifemap


def setup_logging(name: str, level: str = "INFO", log_file: typing.Optional[str] = None):
    """
    Configure loguru sinks for a lifemap process.

    Args:
        name (str): Program name, used to label the file sink.
        level (str): Minimum level for every sink.
        log_file (str, optional): When given, a serialized (JSON lines) file
            sink is added next to the colorized stderr sink.
    """
    logformat = {
        "format": "{time} - {level} - " + name + " - {message}",
        "backtrace": True,
        "diagnose": False,
        "level": level.upper(),
    }

    handlers = [{"sink": sys.stderr, "colorize": True, **logformat}]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(
            {
                "sink": log_file,
                "serialize": True,
                "compression": "zip",
                **logformat,
            }
        )
    logger.configure(handlers=handlers)


def get_config(extra: typing.Optional[str] = None) -> dict:
    """
    Load layered settings: packaged defaults, then config.user.toml in the
    working directory, then the explicit file given by --config.

    Environment variables are never consulted.
    """
    from dynaconf import Dynaconf

    root_path = Path(lifemap.__file__).parent

    files = [root_path / "config.default.toml"]

    if Path("config.user.toml").exists():
        files.append("config.user.toml")
    if extra:
        if not Path(extra).exists():
            raise FileNotFoundError(f"config file {extra} does not exist")
        files.append(extra)

    d = Dynaconf(
        settings_files=[str(f) for f in files],
        merge_enabled=True,
        environments=False,
        loaders=[],
    )

    return d.to_dict()


def utcnow():
    return datetime.now(timezone.utc)


def make_rng(seed: typing.Optional[int], *stream: int) -> np.random.Generator:
    """
    Build a numpy Generator for a seed plus optional stream ids, so that
    independent workers draw reproducible, non-overlapping sequences.
    """
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path, data: bytes):
    """
    Write data to path through a temp file and rename, so readers see
    either the old or the new content.
    """
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def mod_import(module):
    """
    A generic Python module loader.

    Args:
        module (str, module): A Python path (dot-notation like
            `lifemap.commands.store`) or an already imported module object.

    Returns:
        (module or None): An imported module. If the input argument was
        already a module, this is returned as-is. Returns `None` and logs
        an error if the import failed.

    """
    if not module:
        return None

    if isinstance(module, types.ModuleType):
        # if this is already a module, we are done
        return module

    try:
        return importlib.import_module(module)
    except ImportError as err:
        logger.error(f"Could not import {module}: {err}")
        return None


def callables_from_module(module) -> dict[str, callable]:
    """
    Return all global-level callables defined in a module.

    Args:
        module (str, module): A python-path to a module or an actual
            module object.

    Returns:
        callables (dict): A dict of {name: callable, ...} from the module.

    Notes:
        Will ignore callables whose names start with underscore "_".

    """
    mod = mod_import(module)
    if not mod:
        return {}
    # make sure to only return callables actually defined in this module (not imports)
    members = getmembers(
        mod, predicate=lambda obj: callable(obj) and getmodule(obj) == mod
    )
    return dict((key, val) for key, val in members if not key.startswith("_"))


class LogTime:
    def __init__(self, message, level="INFO", timings: typing.Optional[dict] = None, key=None):
        """
        :param message: The message to log (e.g. "Loading map")
        :param level: The log level (TRACE, DEBUG, INFO, etc.)
        :param timings: Optional dict that receives the duration under key.
        """
        self.message = message
        self.level = level
        self.timings = timings
        self.key = key or message
        self.start_time = None
        self.duration = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        end_time = time.perf_counter()
        self.duration = end_time - self.start_time
        if self.timings is not None:
            self.timings[self.key] = self.duration
        logger.log(self.level, f"{self.message} took {self.duration:.6f} seconds")


def config_section(settings: dict, name: str) -> dict:
    """A table of loaded settings; dynaconf upper-cases top-level keys."""
    for key, value in settings.items():
        if key.lower() == name.lower():
            return dict(value)
    return dict()
