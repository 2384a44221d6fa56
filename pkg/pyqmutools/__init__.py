__all__ = [
    "audit",
    "command_line",
    "config",
    "datasets",
    "documents",
    "errors",
    "experiments",
    "fed",
    "geo",
    "learn",
    "losses",
    "pqc",
    "privacy",
    "qcore",
    "qkernel",
    "unlearn",
]
