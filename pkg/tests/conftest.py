from __future__ import annotations

import ipaddress
import socket
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
BRAS_QUESTION = ("What medication for hypertension in a 68-year-old patient "
                 "with bilateral renal artery stenosis?")


class NetworkBlocked(RuntimeError):
    pass


_real_connect = socket.socket.connect
_real_connect_ex = socket.socket.connect_ex
_state = {"allow_loopback": True}


def _is_loopback(address) -> bool:
    if isinstance(address, (str, bytes)):  # unix socket path
        return True
    host = address[0]
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


def _check(address) -> None:
    if not (_state["allow_loopback"] and _is_loopback(address)):
        raise NetworkBlocked(f"network access attempted: {address!r}")


def _guarded_connect(self, address):
    _check(address)
    return _real_connect(self, address)


def _guarded_connect_ex(self, address):
    _check(address)
    return _real_connect_ex(self, address)


@pytest.fixture(autouse=True, scope="session")
def network_guard():
    """Only loopback connections (mock servers) are ever allowed."""
    socket.socket.connect = _guarded_connect
    socket.socket.connect_ex = _guarded_connect_ex
    yield
    socket.socket.connect = _real_connect
    socket.socket.connect_ex = _real_connect_ex


@pytest.fixture
def no_network():
    """Fail on any connection, loopback included, for offline-mode runs."""
    _state["allow_loopback"] = False
    yield
    _state["allow_loopback"] = True


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def bras_graph():
    from gatedkg.kg import load_graph
    return load_graph(FIXTURES / "bras_graph.jsonl")


# -- acceptance summary ------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
