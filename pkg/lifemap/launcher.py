#!/usr/bin/env python
import argparse
import sys
import typing
from pathlib import Path

import orjson
from loguru import logger
from pydantic import ValidationError
from rich.console import Console

import lifemap
from lifemap.commands.base import Command
from lifemap.errors import LifemapError
from lifemap.geom.index import set_query_workers
from lifemap.utils import atomic_write_bytes, callables_from_module, config_section, get_config, setup_logging

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; lifemap reserves 2 for bad data."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_options(parser: argparse.ArgumentParser, nested: bool = False):
    """
    Options accepted before or after the command name. The copies on
    command parsers leave unset options alone so they do not override
    values given before the command.
    """
    unset = dict(default=argparse.SUPPRESS) if nested else dict()
    group = parser.add_argument_group("global options") if nested else parser
    group.add_argument("--config", help="extra TOML config file, layered over the defaults", **unset)
    group.add_argument("--log-level", help="TRACE, DEBUG, INFO, WARNING or ERROR", **unset)
    group.add_argument("--log-file", help="also write JSON-lines logs to this file", **unset)
    group.add_argument("--seed", type=int, help="seed for every stochastic stage", **(unset or dict(default=None)))
    group.add_argument("--threads", type=int, help="worker threads", **(unset or dict(default=1)))
    group.add_argument("--report", type=Path, help="write a JSON report of the run", **unset)
    group.add_argument("--timings", action="store_true", help="include stage timings in the report", **unset)


def register_commands(settings: dict) -> dict[str, type[Command]]:
    """Every Command subclass defined in the modules of the [commands] table, by name."""
    lifemap.COMMANDS.clear()
    for module in config_section(settings, "commands").values():
        for obj in callables_from_module(module).values():
            if isinstance(obj, type) and issubclass(obj, Command) and obj.name != Command.name:
                lifemap.COMMANDS[obj.name] = obj
    return lifemap.COMMANDS


class Launcher:
    def __init__(self, console: typing.Optional[Console] = None):
        self.console = console or Console(highlight=False, soft_wrap=True)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = _Parser(prog="lifemap", description="Lifelong LiDAR map maintenance.")
        _global_options(parser)
        parser.add_argument("--version", action="version", version=f"lifemap {lifemap.__version__}")
        subparsers = parser.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)
        subparsers.required = True
        for name in sorted(lifemap.COMMANDS):
            cls = lifemap.COMMANDS[name]
            sub = subparsers.add_parser(
                name,
                aliases=list(cls.aliases),
                help=cls.summary(),
                description=(cls.__doc__ or "").strip() or None,
                formatter_class=argparse.RawDescriptionHelpFormatter,
            )
            sub.set_defaults(command_class=cls)
            cls.add_arguments(sub)
            _global_options(sub, nested=True)
        return parser

    def configure(self, argv: list[str]):
        """Logging and settings from the options that must be known before parsing the rest."""
        pre = _Parser(add_help=False, allow_abbrev=False)
        _global_options(pre)
        known, _ = pre.parse_known_args(argv)

        lifemap.SETTINGS.clear()
        lifemap.SETTINGS.update(get_config(known.config))
        log_config = config_section(lifemap.SETTINGS, "logging")
        setup_logging(
            "lifemap",
            known.log_level or log_config.get("level", "INFO"),
            known.log_file or log_config.get("file") or None,
        )
        register_commands(lifemap.SETTINGS)

    def write_report(self, command: Command, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        data = orjson.dumps(
            command.report(),
            option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY,
        )
        atomic_write_bytes(path, data + b"\n")

    def run(self, argv: list[str]) -> int:
        try:
            self.configure(argv)
            args = self.build_parser().parse_args(argv)
        except UsageError as err:
            self.console.print(str(err), markup=False)
            return EXIT_USAGE
        except FileNotFoundError as err:
            self.console.print(f"lifemap: {err}", markup=False)
            return EXIT_USAGE

        if args.threads < 1:
            self.console.print("lifemap: --threads must be at least 1", markup=False)
            return EXIT_USAGE
        set_query_workers(args.threads)

        command = args.command_class(self, args)
        code = EXIT_OK
        try:
            command.execute()
        except Command.Error as err:
            self.console.print(f"{command.name}: {err}", markup=False)
            code = EXIT_USAGE
        except ValidationError as err:
            self.console.print(f"{command.name}: {err}", markup=False)
            code = EXIT_USAGE
        except LifemapError as err:
            logger.error(f"{type(err).__name__}: {err}")
            command.metrics["error"] = f"{type(err).__name__}: {err}"
            code = err.exit_code
        except OSError as err:
            logger.error(f"{command.name}: {err}")
            command.metrics["error"] = str(err)
            code = EXIT_DATA

        if args.report:
            self.write_report(command, args.report)
        return code


def main(argv: typing.Optional[list[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    return Launcher().run(argv)


if __name__ == "__main__":
    sys.exit(main())
