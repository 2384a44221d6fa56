# PYTHON_ARGCOMPLETE_OK

import argparse
import importlib.util
import logging
import os
import sys

from .command_registry import _COMMAND_SPECS, register_command
from .config import RunConfig, load_config
from .errors import InvariantViolation, ValidationError
from .experiments import run_experiment

_ARGCOMPLETE_SPEC = importlib.util.find_spec("argcomplete")
if (
    _ARGCOMPLETE_SPEC is not None
    and _ARGCOMPLETE_SPEC.submodule_search_locations is not None
):
    _ARGCOMPLETE_COMPLETERS_SPEC = importlib.util.find_spec(
        "argcomplete.completers"
    )
else:
    _ARGCOMPLETE_COMPLETERS_SPEC = None
if _ARGCOMPLETE_SPEC is not None:
    import argcomplete
else:
    argcomplete = None
if _ARGCOMPLETE_COMPLETERS_SPEC is not None:
    from argcomplete.completers import FilesCompleter
else:
    FilesCompleter = None

PROG = "pyqmu"
EXIT_VALIDATION = 1
EXIT_INVARIANT = 2
EXIT_IO = 3

_RUN_HELP = {
    "config": "YAML run configuration",
    "seed": "master seed; overrides the seed in the configuration",
    "out": "output directory; overrides the configured one",
}
_RUN_OPTIONS = dict(
    help=_RUN_HELP,
    filename_extensions={"config": ["yaml", "yml"]},
    types={"seed": int},
)


def run(experiment, config=None, seed=None, out=None):
    """Load the configuration for ``experiment`` and execute it."""
    if config is None:
        cfg = RunConfig.from_dict(
            {}, seed=seed, output=out, experiment=experiment
        )
    else:
        cfg = load_config(config, seed=seed, output=out, experiment=experiment)
    return run_experiment(cfg)


@register_command(
    "Generate or ingest a dataset and write its CSV snapshot",
    **_RUN_OPTIONS,
)
def gen_data(config=None, seed=None, out=None):
    return run("gen-data", config, seed, out)


@register_command("Train the circuit classifier", **_RUN_OPTIONS)
def train(config=None, seed=None, out=None):
    return run("train", config, seed, out)


@register_command(
    "Train the counterfactual model on the retained set only",
    **_RUN_OPTIONS,
)
def retrain(config=None, seed=None, out=None):
    return run("retrain", config, seed, out)


@register_command(
    "Forget the configured samples and certify the result",
    description=(
        "Train, retrain the counterfactual, apply the configured"
        " mechanism\n(qmu_i, reset_partial, influence or fisher) and write"
        " an unlearning\nreport, its Markdown summary and the forgetting"
        " curve."
    ),
    **_RUN_OPTIONS,
)
def unlearn(config=None, seed=None, out=None):
    return run("unlearn", config, seed, out)


@register_command(
    "Assess forgetting risk before any unlearning", **_RUN_OPTIONS
)
def audit(config=None, seed=None, out=None):
    return run("audit", config, seed, out)


@register_command(
    "Simulate federated rounds with secure aggregation and DP noise",
    **_RUN_OPTIONS,
)
def fed(config=None, seed=None, out=None):
    return run("fed", config, seed, out)


@register_command(
    "Fit kernel ridge regression and delete samples exactly",
    **_RUN_OPTIONS,
)
def kernel(config=None, seed=None, out=None):
    return run("kernel", config, seed, out)


@register_command(
    "Time the gradient, QFIM and deletion kernels", **_RUN_OPTIONS
)
def bench(config=None, seed=None, out=None):
    return run("bench", config, seed, out)


def _subcommand_help_hint(prog):
    return (
        f"*** Run '{prog} --help <subcommand>' to learn about "
        "subcommand options. ***"
    )


class PyQMUArgumentParser(argparse.ArgumentParser):
    """ArgumentParser with a clearer root-level missing-subcommand hint."""

    def __init__(self, *args, is_root_parser=False, **kwargs):
        super().__init__(*args, **kwargs)
        self._pyqmu_is_root_parser = is_root_parser

    def error(self, message):
        if self._pyqmu_is_root_parser:
            self.print_usage(sys.stderr)
            hint = _subcommand_help_hint(self.prog)
            self.exit(2, f"{self.prog}: error: {message}\n{hint}\n")
        super().error(message)


def build_parser():
    parser = PyQMUArgumentParser(
        prog=PROG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        is_root_parser=True,
    )
    parser.epilog = _subcommand_help_hint(parser.prog)
    parser.add_argument(
        "--log",
        default="WARNING",
        help="Set the logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)",
    )
    parser._pyqmu_subparsers = {}
    subparsers = parser.add_subparsers(dest="command")
    subparsers.required = True
    for name, spec in _COMMAND_SPECS.items():
        subparser = subparsers.add_parser(
            name,
            help=spec["help"],
            description=spec["description"],
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        for argument in spec["arguments"]:
            action = subparser.add_argument(
                *argument["flags"], **dict(argument["kwargs"])
            )
            allowednames = argument.get("completion_allowednames")
            if FilesCompleter is not None and allowednames is not None:
                action.completer = FilesCompleter(allowednames=allowednames)
        subparser.set_defaults(_handler=spec["handler"])
        parser._pyqmu_subparsers[name] = subparser
    return parser


def configure_logging(level_name):
    numeric_level = getattr(logging, str(level_name).upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {level_name}")
    logging.basicConfig(level=numeric_level)
    return numeric_level


def _fail(code, message):
    print(f"{PROG}: error: {message}", file=sys.stderr)
    sys.exit(code)


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    # {{{ run argcomplete
    if argcomplete is not None:
        # Only suggest options after the user types '-' so bare
        # `pyqmu <tab>` offers subcommands only.
        try:
            argcomplete.autocomplete(
                parser,
                always_complete_options=False,
                exit_method=os._exit,
                output_stream=None,
            )
        except TypeError as exc:
            if "unexpected keyword argument" not in str(exc):
                raise
            argcomplete.autocomplete(parser)
    # }}}
    if not argv:
        parser.print_help()
        return
    if argv[0] in ("-h", "--help") and len(argv) > 1:
        subcommand = argv[1]
        if subcommand in parser._pyqmu_subparsers:
            parser._pyqmu_subparsers[subcommand].print_help()
            return
    namespace = parser.parse_args(argv)
    try:
        configure_logging(namespace.log)
    except ValueError as exc:
        parser.error(str(exc))
    handler = namespace._handler
    handler_kwargs = dict(vars(namespace))
    for key in ("_handler", "command", "log"):
        handler_kwargs.pop(key, None)
    try:
        handler(**handler_kwargs)
    except ValidationError as exc:
        _fail(EXIT_VALIDATION, exc)
    except InvariantViolation as exc:
        _fail(EXIT_INVARIANT, f"invariant violated: {exc}")
    except OSError as exc:
        _fail(EXIT_IO, exc)


if __name__ == "__main__":
    main()
