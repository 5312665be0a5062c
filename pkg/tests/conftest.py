import pytest

from fanolab.model_space import make_product_model, make_radial_model


@pytest.fixture(scope="session")
def round_model():
    return make_radial_model(1.0, 1.0, T=12, N=256)


@pytest.fixture(scope="session")
def football():
    return make_radial_model(0.5, 0.5, T=14, N=256)


@pytest.fixture(scope="session")
def football_fine():
    return make_radial_model(0.5, 0.5, T=14, N=1024)


@pytest.fixture(scope="session")
def unequal():
    return make_radial_model(0.4, 0.8, T=12, N=256)


@pytest.fixture(scope="session")
def product():
    return make_product_model(T=10, N=32)


@pytest.fixture(scope="session", params=["round", "football", "unequal", "product"])
def any_model(request, round_model, football, unequal, product):
    return {"round": round_model, "football": football, "unequal": unequal, "product": product}[request.param]


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Print and collect one pass/fail line per acceptance criterion, then assert."""
    def _verdict(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        assert ok, line
    return _verdict


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
