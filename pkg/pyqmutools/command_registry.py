import inspect


class CommandRegistrationError(Exception):
    """Exception raised when attempting to register a duplicate subcommand."""


# Registry of the experiment subcommands offered by the CLI dispatcher.
_COMMAND_SPECS = {}


def _completion_patterns(filename_extensions):
    """Normalize ``{argument: extensions}`` into ``*.ext`` patterns."""
    allowednames = {}
    for argument_name, extensions in (filename_extensions or {}).items():
        if isinstance(extensions, str):
            extensions = [extensions]
        allowednames[argument_name] = []
        for extension in extensions:
            if not isinstance(extension, str) or not extension.strip():
                raise CommandRegistrationError(
                    "filename_extensions must contain non-empty strings"
                )
            extension = extension.strip()
            if extension.startswith("*."):
                allowednames[argument_name].append(extension)
            elif extension.startswith("."):
                allowednames[argument_name].append("*" + extension)
            else:
                allowednames[argument_name].append("*." + extension)
    return allowednames


def register_command(
    help_text,
    description=None,
    help=None,
    filename_extensions=None,
    types=None,
):
    """Register an experiment handler for the CLI dispatcher.

    Keyword parameters of the handler become ``--long-flags``; ``types``
    gives the converter for flags whose default is ``None``.
    """

    def decorator(func):
        name = func.__name__.replace("_", "-")
        if name in _COMMAND_SPECS:
            raise CommandRegistrationError(
                f"Command '{name}' already registered"
            )
        parameters = [
            parameter
            for parameter in inspect.signature(func).parameters.values()
            if parameter.kind
            not in [
                inspect.Parameter.VAR_POSITIONAL,
                inspect.Parameter.VAR_KEYWORD,
            ]
        ]
        allowednames = _completion_patterns(filename_extensions)
        converters = types if types is not None else {}
        names = {parameter.name for parameter in parameters}
        referenced = set(allowednames) | set(converters)
        unknown_arguments = sorted(referenced - names)
        if unknown_arguments:
            raise CommandRegistrationError(
                "registration references unknown arguments: "
                + ", ".join(unknown_arguments)
            )
        _COMMAND_SPECS[name] = {
            "handler": func,
            "help": help_text.strip(),
            "description": (
                description if description is not None else help_text
            ).strip(),
            "arguments": [],
        }
        argument_help = help if help is not None else {}
        for parameter in parameters:
            flags = []
            kwargs = {}
            if parameter.default is inspect.Parameter.empty:
                flags.append(parameter.name)
            else:
                dash_prefix = "-" if len(parameter.name) == 1 else "--"
                flags.append(dash_prefix + parameter.name.replace("_", "-"))
                kwargs["default"] = parameter.default
                if isinstance(parameter.default, bool):
                    kwargs["action"] = (
                        "store_false" if parameter.default else "store_true"
                    )
                elif parameter.name in converters:
                    kwargs["type"] = converters[parameter.name]
                elif parameter.default is not None:
                    kwargs["type"] = type(parameter.default)
            if parameter.name in argument_help:
                kwargs["help"] = argument_help[parameter.name].strip()
            argument_spec = {"flags": flags, "kwargs": kwargs}
            if parameter.name in allowednames:
                argument_spec["completion_allowednames"] = allowednames[
                    parameter.name
                ]
            _COMMAND_SPECS[name]["arguments"].append(argument_spec)
        return func

    return decorator
