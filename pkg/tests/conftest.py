from pathlib import Path

import pytest

DATA = Path(__file__).resolve().parents[1] / "src" / "safehandover" / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


def skeleton_path(name: str) -> Path:
    return DATA / "skeletons" / f"{name}.jsonl"


_RUNS = {}


def bundled_run(name: str):
    """Run a bundled scenario once per test session and return ``(log, wall seconds)``."""
    if name not in _RUNS:
        import time

        from safehandover.sim import load_scenario, run_scenario

        t0 = time.perf_counter()
        log = run_scenario(load_scenario(name))
        _RUNS[name] = (log, time.perf_counter() - t0)
    return _RUNS[name]
