"""Shared fixtures: one tiny trained scene reused by the CLI, query and
service tests. Kept deliberately small so the unit suite stays fast; the
full-size pipeline lives in test_acceptance.py."""

import json
import os
import sys

import pytest

from promptsplat import cli


def pytest_terminal_summary(terminalreporter):
    # re-emit the per-criterion verdict lines, which stdout capture would
    # otherwise swallow for passing tests
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", []) if mod else []
    if lines:
        terminalreporter.ensure_newline()
        terminalreporter.section("acceptance criteria", sep="-")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Synthetic dataset (12 frames, 40x40) with a trained codec."""
    root = tmp_path_factory.mktemp("tiny") / "ds"
    rc = cli.main(
        [
            "gen-synthetic",
            "--out", str(root),
            "--classes", "3",
            "--frames", "12",
            "--resolution", "40",
            "--seed", "3",
        ]
    )
    assert rc == 0
    manifest = root / "manifest.json"
    rc = cli.main(["codec-train", "--manifest", str(manifest), "--epochs", "6"])
    assert rc == 0
    return manifest


@pytest.fixture(scope="session")
def tiny_run(tiny_dataset, tmp_path_factory):
    """Short training run on the tiny dataset; returns paths."""
    out = tmp_path_factory.mktemp("tiny_run")
    rc = cli.main(
        [
            "train",
            "--manifest", str(tiny_dataset),
            "--out", str(out),
            "--iterations", "80",
            "--psnr-interval", "40",
        ]
    )
    assert rc == 0
    man = json.loads(tiny_dataset.read_text())
    return {
        "manifest": tiny_dataset,
        "root": tiny_dataset.parent,
        "checkpoint": out / "checkpoint",
        "codec": tiny_dataset.parent / man["codec"],
        "lexicon": tiny_dataset.parent / man["lexicon"],
        "prompts": sorted(man["prompt_classes"]),
        "prompt_classes": man["prompt_classes"],
    }


def first_prompt(run) -> str:
    return run["prompts"][0]
