import contextlib
import socket
import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sizerec.catalog import (  # noqa: E402
    Event,
    EventType,
    Gender,
    Instance,
    Product,
    ReturnReason,
    Scale,
    UserHistory,
)
from sizerec.pipeline import generate, load_config, make_splits, train_all  # noqa: E402


@pytest.fixture(scope="session")
def smoke_config():
    return load_config("smoke")


@pytest.fixture(scope="session")
def smoke_data(smoke_config):
    return generate(smoke_config)


@pytest.fixture(scope="session")
def smoke_splits(smoke_data, smoke_config):
    return make_splits(smoke_data, smoke_config.split)


@pytest.fixture(scope="session")
def smoke_bundles(smoke_config, smoke_data, smoke_splits):
    bundles, _ = train_all(smoke_config, smoke_data, smoke_splits)
    return bundles


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def order(day, pos, brand="BR0", cat="CAT0", scale="S0", reason=ReturnReason.NOT_RETURNED, pid=None):
    return Event(EventType.ORDER, day, brand, cat, scale, pos, reason, pid)


def bag(day, pos, brand="BR0", cat="CAT0", scale="S0", pid=None):
    return Event(EventType.ADD2BAG, day, brand, cat, scale, pos, ReturnReason.NOT_APPLICABLE, pid)


def make_instance(user, events, day, label, brand="BR0", cat="CAT0", scale="S0", pid="P0",
                  gender=Gender.WOMEN):
    return Instance(UserHistory(user, tuple(events)), Product(pid, brand, cat, scale, gender), label, day)


@pytest.fixture
def toy_scales():
    return {"S0": Scale("S0", ("XS", "S", "M", "L", "XL", "XXL")), "S1": Scale("S1", ("36", "38", "40", "42"))}


@contextlib.contextmanager
def live_server(app):
    """Run `app` under uvicorn on a free local port; yields the base URL."""
    import uvicorn

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 20
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.02)
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10)


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """record(n, ok, detail): log one pass/fail line for acceptance criterion n, then assert it."""

    def record(n: int, ok: bool, detail: str):
        _ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
