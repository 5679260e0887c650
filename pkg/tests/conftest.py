import logging
import os
from pathlib import Path

import pytest

from contentinject.config import ENV_PREFIX

DATA = Path(__file__).parent / "data"
TRAINED = DATA / "toy_denoiser.npz"

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for var in list(os.environ):
        if var.startswith(ENV_PREFIX):
            monkeypatch.delenv(var)


@pytest.fixture(scope="session")
def trained_model():
    """The toy denoiser trained with the default recipe (cached in tests/data)."""
    from contentinject.cli import main
    from contentinject.denoiser import load_checkpoint

    if not TRAINED.exists():
        logging.getLogger(__name__).warning("training %s from scratch; this takes a long time", TRAINED)
        out = DATA / "train_run"
        code = main(["train", f"--paths.checkpoint={TRAINED}", f"--paths.output={out}"])
        assert code == 0
    return load_checkpoint(TRAINED)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
