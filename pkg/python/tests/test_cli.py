"""Command line entry points, report formats and exit codes."""

from __future__ import annotations

import csv
import io
import json
import operator
from dataclasses import dataclass
from pathlib import Path

import pytest
from dyvm.cli import EXIT_BAD_INPUT
from dyvm.cli import EXIT_OK
from dyvm.cli import build_parser
from dyvm.cli import cmd_flops
from dyvm.cli import main
from dyvm.cli import resolve_spec
from dyvm.environment import Environment
from dyvm.model import ModelConfig
from dyvm.model import init_weights
from dyvm.model import save_weights
from dyvm.numerics import Rng


@dataclass
class Case:
    """Table driven test case helper."""

    name: str
    argv: list[str]


BAD_INPUT_CASES: list[Case] = [
    Case(name="unknown preset", argv=["flops", "--preset", "vim-xl"]),
    Case(name="token ratio above one", argv=["flops", "--token-ratio", "1.5"]),
    Case(name="negative seed", argv=["consistency", "--seed", "-3"]),
    Case(name="unknown format", argv=["flops", "--format", "xml"]),
    Case(name="unknown mask mode", argv=["consistency", "--mask", "sorted"]),
    Case(name="forward as csv", argv=["forward", "--format", "csv"]),
    Case(name="empty ratio list", argv=["flops", "--token-ratios", ""]),
    Case(
        name="missing config file",
        argv=["flops", "--config", "/nonexistent/dyvm.json"],
    ),
    Case(
        name="missing weights",
        argv=["forward", "--weights", "/nonexistent/weights.json"],
    ),
]


@pytest.mark.parametrize("case", BAD_INPUT_CASES, ids=operator.attrgetter("name"))
def test_bad_input_exits_with_two(
    case: Case, capsys: pytest.CaptureFixture[str]
) -> None:
    assert main(case.argv) == EXIT_BAD_INPUT
    assert capsys.readouterr().out == ""


def test_flops_default_is_csv(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["flops"]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["model", "token_ratio", "block_ratio", "gflops", "reduction_pct"]
    assert rows[1] == ["vim-s", "0.7", "0.8", "3.31736", "34.74"]


def test_flops_sweep(capsys: pytest.CaptureFixture[str]) -> None:
    argv = [
        "flops",
        "--preset",
        "vim-t",
        "--token-ratios",
        "0.7,0.8,0.9",
        "--block-ratios",
        "0.8,1.0",
    ]
    assert main(argv) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1 + 3 * 2
    assert {row[0] for row in rows[1:]} == {"vim-t"}


def test_flops_json(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["flops", "--format", "json"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["schema_version"] == 1
    assert report["command"] == "flops"


def test_config_file_overrides_preset(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"name": "vim-s-half"}), encoding="utf-8")
    assert main(["flops", "--config", str(path), "--token-ratio", "0.5"]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[1][:3] == ["vim-s-half", "0.5", "0.8"]


def test_consistency_report_is_deterministic(
    capsys: pytest.CaptureFixture[str],
) -> None:
    argv = ["consistency", "--seed", "3", "--trials", "8"]
    assert main(argv) == EXIT_OK
    first = capsys.readouterr().out
    assert main(argv) == EXIT_OK
    assert capsys.readouterr().out == first

    report = json.loads(first)
    assert report["command"] == "consistency"
    assert report["passed"] is True
    assert len(report["trials"]) == 8


def test_consistency_csv(capsys: pytest.CaptureFixture[str]) -> None:
    argv = ["consistency", "--trials", "5", "--mask", "consecutive", "--format", "csv"]
    assert main(argv) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0][0] == "trial"
    assert len(rows) == 6
    assert all(row[1] == "true" for row in rows[1:])


def test_report_written_to_out(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    out = tmp_path / "report.csv"
    assert main(["flops", "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out == ""
    assert out.read_text(encoding="utf-8").startswith("model,token_ratio")


def test_gradcheck(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["gradcheck", "--seeds", "0"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert {row["seed"] for row in report["rows"]} == {0}


def test_forward(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["forward", "--batch", "1", "--seed", "2"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert report["expected_stage_token_counts"] == [44, 31]


def test_forward_with_archived_weights(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    cfg = ModelConfig(
        name="archived",
        image_size=8,
        patch_size=2,
        embed_dim=8,
        n_layers=3,
        n_state=4,
        conv_width=3,
        n_classes=5,
        prune_layers=(1, 2),
    )
    manifest = save_weights(cfg, init_weights(cfg, Rng(0)), tmp_path / "w")
    argv = ["forward", "--weights", str(manifest), "--batch", "1"]
    assert main(argv) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["name"] == "archived"
    assert report["config"]["token_ratio"] == 1.0
    assert report["config"]["block_ratio"] == 1.0
    assert report["expected_stage_token_counts"] == []

    assert main([*argv, "--token-ratio", "0.7"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["token_ratio"] == 0.7
    assert report["config"]["block_ratio"] == 1.0
    assert report["expected_stage_token_counts"] == [11, 7]


def test_forward_keeps_archived_ratios_without_flags(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    cfg = ModelConfig(
        name="archived",
        image_size=8,
        patch_size=2,
        embed_dim=8,
        n_layers=3,
        n_state=4,
        conv_width=3,
        n_classes=5,
        prune_layers=(1, 2),
        token_ratio=0.5,
        block_ratio=0.9,
    )
    manifest = save_weights(cfg, init_weights(cfg, Rng(1)), tmp_path / "w")
    argv = ["forward", "--weights", str(manifest), "--batch", "1"]

    assert main(argv) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["token_ratio"] == 0.5
    assert report["config"]["block_ratio"] == 0.9

    assert main([*argv, "--block-ratio", "0.6"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["token_ratio"] == 0.5
    assert report["config"]["block_ratio"] == 0.6


@pytest.mark.parametrize(
    "manifest_text",
    [
        pytest.param("[1, 2]", id="manifest not an object"),
        pytest.param(
            json.dumps({"schema_version": 1, "config": {}, "tensors": [{"name": "x"}]}),
            id="entry without offset",
        ),
    ],
)
def test_forward_rejects_malformed_archives(
    manifest_text: str, tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    (tmp_path / "w.json").write_text(manifest_text, encoding="utf-8")
    (tmp_path / "w.bin").write_bytes(b"")
    argv = ["forward", "--weights", str(tmp_path / "w.json")]
    assert main(argv) == EXIT_BAD_INPUT
    assert capsys.readouterr().out == ""


def test_flops_command_fills_the_cache() -> None:
    env = Environment()
    args = build_parser().parse_args(
        ["flops", "--token-ratios", "0.6,0.7", "--block-ratios", "0.8"]
    )
    spec = resolve_spec(env, args)
    text, check = cmd_flops(env, spec)
    check()
    assert len(env.flops_cache) == 2
    assert text.count("vim-s") == 2

    cmd_flops(env, spec)
    assert env.flops_cache.hits == 2
