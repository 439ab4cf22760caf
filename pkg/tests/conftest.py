import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parents[1]
TOY_CONFIG = ROOT / "configs" / "toy.ini"

_acceptance_lines: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """``record(number, ok, detail)`` stores a verdict line for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _acceptance_lines[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance_lines):
        ok, detail = _acceptance_lines[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_unit_quats(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """Train and rectify the four-mode toy model once through the CLI."""
    from reqflow.cli import main

    out = tmp_path_factory.mktemp("toy")
    start = time.perf_counter()
    assert main(["train", "--config", str(TOY_CONFIG), "--out", str(out / "train")]) == 0
    trained = out / "train" / "checkpoint.json"
    assert main(["rectify", "--config", str(TOY_CONFIG), "--out", str(out / "rectify"),
                 "--checkpoint", str(trained)]) == 0
    return {
        "root": out,
        "trained": trained,
        "rectified": out / "rectify" / "checkpoint.json",
        "seconds": time.perf_counter() - start,
    }


@pytest.fixture(scope="session")
def toy_verdict(toy_run):
    """CLI ``verify`` on the session's trained and rectified checkpoints."""
    from reqflow.cli import main

    out = toy_run["root"] / "verify"
    start = time.perf_counter()
    status = main(["verify", "--config", str(TOY_CONFIG), "--out", str(out),
                   "--checkpoint", str(toy_run["trained"]), "--checkpoint", str(toy_run["rectified"])])
    return {"status": status, "out": out, "seconds": time.perf_counter() - start}


TINY_INI = """\
[run]
seed = 3
[solver]
steps = 20
[train]
toy_size = 64
epochs = 3
batch_size = 32
learning_rate = 1e-3
optimizer = adam
hidden = 8
[rectify]
pairs = 48
epochs = 2
[sample]
count = 5
chain = true
[bench]
trials = 10
[verify]
samples = 100
pair_count = 100
steps = 20
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


def run_every_command(config, out: Path) -> dict[str, int]:
    """Run all subcommands into ``out/<command>``; returns their exit codes."""
    from reqflow.cli import main

    codes = {}
    c = ["--config", str(config)]
    codes["bench-roundtrip"] = main(["bench-roundtrip", *c, "--out", str(out / "bench")])
    codes["train"] = main(["train", *c, "--out", str(out / "train")])
    ck = str(out / "train" / "checkpoint.json")
    codes["sample"] = main(["sample", *c, "--out", str(out / "sample"), "--checkpoint", ck])
    codes["rectify"] = main(["rectify", *c, "--out", str(out / "rectify"), "--checkpoint", ck])
    codes["verify"] = main(["verify", *c, "--out", str(out / "verify"), "--checkpoint", ck,
                            "--checkpoint", str(out / "rectify" / "checkpoint.json")])
    return codes


def artifact_bytes(root: Path) -> dict[str, bytes]:
    """Every file under ``root`` except run manifests, keyed by relative path."""
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}
