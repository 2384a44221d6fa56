import io
import os
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from pyqmutools import command_line, experiments
from pyqmutools.audit import load_report
from pyqmutools.command_registry import (
    _COMMAND_SPECS,
    CommandRegistrationError,
    register_command,
)

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "small_run.yaml"


def _config(tmp_path, **sections):
    data = yaml.safe_load(FIXTURE.read_text())
    data.update(sections)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def _run(args):
    with pytest.raises(SystemExit) as excinfo:
        command_line.main(args)
    return excinfo.value.code


@pytest.mark.parametrize(
    "command, outputs",
    [
        ("gen-data", ["dataset.csv", "dataset_report.yaml"]),
        ("train", ["model.yaml", "train_report.yaml"]),
        ("retrain", ["counterfactual.yaml", "retrain_report.yaml"]),
        ("audit", ["model.yaml", "counterfactual.yaml", "audit_report.yaml"]),
        ("fed", ["ledger.csv", "fed_report.yaml"]),
        ("kernel", ["gram.csv", "kernel_report.yaml"]),
        ("bench", ["timings.csv", "bench_report.yaml"]),
    ],
)
def test_experiments_write_their_outputs(tmp_path, command, outputs):
    out = tmp_path / "out"
    command_line.main(
        [command, "--config", str(FIXTURE), "--out", str(out)]
    )
    for name in outputs + ["manifest.yaml"]:
        assert (out / name).exists(), name
    manifest = yaml.safe_load((out / "manifest.yaml").read_text())
    assert manifest["experiment"] == command
    assert manifest["seeds"]["master"] == 7
    assert "dataset" in manifest["seeds"]["issued"]


def test_unlearn_writes_a_verified_report(tmp_path):
    out = tmp_path / "out"
    command_line.main(["unlearn", "--config", str(FIXTURE), "--out", str(out)])
    report = load_report(out / "unlearn_report.yaml")
    assert report["mechanism"] == "qmu_i"
    assert set(report["membership"]) == {"before", "after", "counterfactual"}
    assert report["param_gap"]["heuristic"] is True
    assert report["reproducibility"]["seed"] == 7
    assert (out / "unlearn_report.md").read_text().startswith("# Unlearning")
    curve = (out / "forgetting_curve.csv").read_text().splitlines()
    assert curve[0] == "iteration,trace_distance"
    assert len(curve) == 1 + len(report["curve"])


@pytest.mark.parametrize("mechanism", ["reset_partial", "influence", "fisher"])
def test_every_mechanism_runs(tmp_path, mechanism):
    data = yaml.safe_load(FIXTURE.read_text())
    data["mechanism"]["name"] = mechanism
    config = tmp_path / "run.yaml"
    config.write_text(yaml.safe_dump(data))
    out = tmp_path / "out"
    command_line.main(["unlearn", "--config", str(config), "--out", str(out)])
    assert load_report(out / "unlearn_report.yaml")["mechanism"] == mechanism


def test_reports_are_reproducible_across_output_directories(tmp_path):
    digests = []
    for name in ("first", "second"):
        out = tmp_path / name
        command_line.main(
            ["unlearn", "--config", str(FIXTURE), "--out", str(out)]
        )
        digests.append(load_report(out / "unlearn_report.yaml")["digest"])
    assert digests[0] == digests[1]


def test_seed_flag_overrides_the_configuration(tmp_path):
    out = tmp_path / "out"
    args = ["--config", str(FIXTURE), "--seed", "11", "--out", str(out)]
    command_line.main(["gen-data"] + args)
    manifest = yaml.safe_load((out / "manifest.yaml").read_text())
    assert manifest["seeds"]["master"] == 11
    assert manifest["config"]["seed"] == 11


def test_defaults_run_without_a_configuration(tmp_path):
    out = tmp_path / "out"
    command_line.main(["gen-data", "--seed", "1", "--out", str(out)])
    report = yaml.safe_load((out / "dataset_report.yaml").read_text())
    assert report["n"] == 100
    assert report["splits"]["forget"] == 15


def test_missing_seed_exits_with_validation_code(tmp_path, capsys):
    assert _run(["gen-data", "--out", str(tmp_path)]) == 1
    assert "seed" in capsys.readouterr().err


def test_invalid_configuration_names_the_field(tmp_path, capsys):
    config = _config(tmp_path, template={"n_qubits": 2, "layers": 3})
    code = _run(["train", "--config", str(config), "--out", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("pyqmu: error: template.layers")


def test_empty_forget_set_is_a_validation_error(tmp_path, capsys):
    config = _config(
        tmp_path,
        dataset={"generator": "blobs", "n": 24, "forget": {"kind": "none"}},
    )
    code = _run(["unlearn", "--config", str(config), "--out", str(tmp_path)])
    assert code == 1
    assert "dataset.forget" in capsys.readouterr().err


def test_missing_configuration_file_is_an_io_error(tmp_path):
    missing = tmp_path / "missing.yaml"
    assert _run(["train", "--config", str(missing)]) == 3


def test_broken_invariant_exits_with_code_two(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(experiments, "SMW_TOL", -1.0)
    code = _run(
        ["kernel", "--config", str(FIXTURE), "--out", str(tmp_path / "out")]
    )
    assert code == 2
    assert "invariant violated" in capsys.readouterr().err


def test_module_entry_point_reports_io_errors(tmp_path):
    repo_root = Path(__file__).resolve().parents[2]
    env = os.environ.copy()
    env["PYTHONPATH"] = os.pathsep.join(
        [str(repo_root)] + [p for p in [env.get("PYTHONPATH")] if p]
    )
    cmd = [
        sys.executable,
        "-m",
        "pyqmutools.command_line",
        "train",
        "--config",
        str(tmp_path / "missing.yaml"),
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True, env=env)
    assert proc.returncode == 3
    assert "pyqmu: error:" in proc.stderr


def test_duplicate_registration_is_rejected():
    with pytest.raises(CommandRegistrationError):

        @register_command("again")
        def train(config=None):
            return None


def test_registration_checks_referenced_arguments():
    with pytest.raises(CommandRegistrationError, match="unknown arguments"):

        @register_command("probe", types={"missing": int})
        def probe_only(config=None):
            return None

    assert "probe-only" not in _COMMAND_SPECS


def test_seed_flag_is_parsed_as_an_integer():
    parser = command_line.build_parser()
    namespace = parser.parse_args(["train", "--seed", "5"])
    assert namespace.seed == 5
    assert namespace.config is None


def test_config_completer_is_extension_specific(monkeypatch):
    class FakeFilesCompleter:
        def __init__(self, allowednames):
            self.allowednames = allowednames

    monkeypatch.setattr(command_line, "FilesCompleter", FakeFilesCompleter)
    parser = command_line.build_parser()
    action = next(
        action
        for action in parser._pyqmu_subparsers["unlearn"]._actions
        if action.dest == "config"
    )
    assert action.completer.allowednames == ["*.yaml", "*.yml"]


def _collect_argcomplete_suggestions(monkeypatch, comp_line):
    argcomplete = pytest.importorskip("argcomplete")
    from argcomplete import io as argcomplete_io

    parser = command_line.build_parser()
    output = io.StringIO()
    monkeypatch.setattr(
        argcomplete.CompletionFinder, "_init_debug_stream", lambda self: None
    )
    monkeypatch.setattr(argcomplete_io, "debug_stream", io.StringIO())
    monkeypatch.setenv("_ARGCOMPLETE", "1")
    monkeypatch.setenv("_ARGCOMPLETE_IFS", "\013")
    monkeypatch.setenv("COMP_LINE", comp_line)
    monkeypatch.setenv("COMP_POINT", str(len(comp_line)))

    class CompletionExit(Exception):
        def __init__(self, code):
            self.code = code

    def exit_method(code=0):
        raise CompletionExit(code)

    with pytest.raises(CompletionExit) as excinfo:
        argcomplete.autocomplete(
            parser,
            always_complete_options=False,
            exit_method=exit_method,
            output_stream=output,
        )
    assert excinfo.value.code == 0
    return [j.rstrip() for j in output.getvalue().split("\013") if j]


def test_argcomplete_root_only_lists_subcommands(monkeypatch):
    suggestions = _collect_argcomplete_suggestions(monkeypatch, "pyqmu ")
    assert sorted(suggestions) == sorted(_COMMAND_SPECS)
    assert all(not j.startswith("-") for j in suggestions)


def test_argcomplete_completes_subcommand_prefix(monkeypatch):
    suggestions = _collect_argcomplete_suggestions(monkeypatch, "pyqmu ke")
    assert suggestions == ["kernel"]
