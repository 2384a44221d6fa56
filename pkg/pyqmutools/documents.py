"""YAML and CSV documents written by the driver, and their digests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml
from dateutil.parser import isoparse
from yaml.emitter import ScalarAnalysis

from .errors import EmptyConfigError, ValidationError

VOLATILE_KEYS = ("created",)
VOLATILE_SUFFIX = "_seconds"


class IndentDumper(yaml.SafeDumper):
    """YAML dumper that always indents nested lists."""

    def increase_indent(self, flow: bool = False, indentless: bool = False):
        return super().increase_indent(flow, False)

    def analyze_scalar(self, scalar: str) -> ScalarAnalysis:
        analysis = super().analyze_scalar(scalar)
        if "\n" in scalar and not analysis.allow_block:
            analysis = ScalarAnalysis(
                scalar=analysis.scalar,
                empty=analysis.empty,
                multiline=analysis.multiline,
                allow_flow_plain=analysis.allow_flow_plain,
                allow_block_plain=analysis.allow_block_plain,
                allow_single_quoted=analysis.allow_single_quoted,
                allow_double_quoted=analysis.allow_double_quoted,
                allow_block=True,
            )
        return analysis


def _str_presenter(dumper, data: str):
    if "\n" in data:
        return dumper.represent_scalar(
            "tag:yaml.org,2002:str", data, style="|"
        )
    return dumper.represent_scalar("tag:yaml.org,2002:str", data)


IndentDumper.add_representer(str, _str_presenter)


def to_plain(value):
    """Convert numpy containers and scalars to built-in Python types."""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


def strip_volatile(value):
    """Drop timestamps and timing fields at every nesting level."""
    if isinstance(value, dict):
        return {
            k: strip_volatile(v)
            for k, v in value.items()
            if k not in VOLATILE_KEYS and not str(k).endswith(VOLATILE_SUFFIX)
        }
    if isinstance(value, list):
        return [strip_volatile(v) for v in value]
    return value


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def document_digest(document) -> str:
    """SHA-256 of the key-sorted JSON form, without volatile fields."""
    canonical = json.dumps(
        _json_safe(strip_volatile(to_plain(document))),
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def bytes_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path) -> str:
    return bytes_digest(Path(path).read_bytes())


def dump_yaml(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.dump(
            to_plain(data),
            f,
            Dumper=IndentDumper,
            default_flow_style=False,
            sort_keys=True,
            allow_unicode=True,
            indent=2,
        )
    return path


def load_yaml(path, empty_error=EmptyConfigError):
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ValidationError(f"{path} is not valid YAML: {e}") from e
    if data is None:
        raise empty_error(f"{path} is empty")
    return data


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])
    return path


def _csv_cell(value):
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if isinstance(value, (np.integer, np.bool_)):
        return int(value)
    return value


def read_csv(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        rows = [row for row in reader if row]
    return header, rows


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def parse_timestamp(text) -> datetime:
    if isinstance(text, datetime):
        return text
    return isoparse(str(text))
