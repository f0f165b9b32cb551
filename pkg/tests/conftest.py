import pytest

from combraman.config import bundled_config_path, load_config


@pytest.fixture(scope="session")
def fiber_cfg():
    return load_config(bundled_config_path("fiber_comb.cfg"))


@pytest.fixture(scope="session")
def mira_cfg():
    return load_config(bundled_config_path("mira_comb.cfg"))


@pytest.fixture(scope="session")
def levels(fiber_cfg):
    return fiber_cfg.levels()


@pytest.fixture(scope="session")
def field(fiber_cfg):
    return fiber_cfg.magnetic_field()


@pytest.fixture(scope="session")
def fiber_comb(fiber_cfg):
    return fiber_cfg.comb()


@pytest.fixture(scope="session")
def transition(fiber_cfg):
    return fiber_cfg.transition()


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
