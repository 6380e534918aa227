import argparse
import typing
from pathlib import Path

from pydantic import BaseModel, ValidationError
from rich.box import ASCII2
from rich.console import Console
from rich.table import Table

import lifemap
from lifemap.utils import config_section


class Command:
    """
    Base class for lifemap subcommands.

    Subclasses set name, declare their options in add_arguments and do
    their work in func. Usage problems are raised as Command.Error; library
    errors propagate to the launcher, which maps them to exit codes.
    """

    name = "!NOTSET!"
    aliases: tuple[str, ...] = ()
    help = ""

    class Error(Exception):
        exit_code = 1

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser):
        pass

    @classmethod
    def summary(cls) -> str:
        if cls.help:
            return cls.help
        doc = (cls.__doc__ or "").strip()
        return doc.splitlines()[0] if doc else ""

    def __init__(self, launcher, args: argparse.Namespace):
        self.launcher = launcher
        self.args = args
        self.console: Console = launcher.console
        self.params: dict[str, typing.Any] = dict()
        self.metrics: dict[str, typing.Any] = dict()
        self.outputs: list[str] = list()
        self.timings: typing.Optional[dict] = dict() if args.timings else None

    @property
    def seed(self) -> typing.Optional[int]:
        return self.args.seed

    @property
    def threads(self) -> int:
        return self.args.threads

    def execute(self):
        self.func()

    def func(self):
        pass

    def settings(self, section: str) -> dict:
        """A table of the loaded configuration, keys as written in the file."""
        return config_section(lifemap.SETTINGS, section)

    def load_params(self, model: type[BaseModel], section: str, **overrides) -> BaseModel:
        """
        Validate a parameter model from the config table plus command-line
        overrides; None overrides are left to the config and the defaults.
        """
        merged = self.settings(section)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        if "seed" in model.model_fields and self.seed is not None:
            merged["seed"] = self.seed
        try:
            params = model.model_validate(merged)
        except ValidationError as err:
            raise self.Error(f"invalid {section} parameters: {err}")
        self.params[section] = params.model_dump(mode="json")
        return params

    def output(self, path) -> Path:
        """Register a written file for the report."""
        self.outputs.append(str(path))
        return Path(path)

    def send_line(self, text: str = ""):
        self.console.print(text, highlight=False)

    def send_rich(self, *args, **kwargs):
        self.console.print(*args, **kwargs)

    def make_table(self, *args, **kwargs) -> Table:
        kwargs["box"] = ASCII2
        return Table(*args, **kwargs)

    def report(self) -> dict:
        return {
            "command": self.name,
            "params": self.params,
            "metrics": self.metrics,
            "timings": self.timings or dict(),
            "outputs": self.outputs,
        }
