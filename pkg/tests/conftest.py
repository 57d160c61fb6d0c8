import pytest

from flatexp import flat_approx as fa

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def desk():
    """Desk-scale construction with the realized P at 512 bits."""
    params = fa.desk_params()
    res = fa.build_Phat(params)
    P = fa.realize_P(res, 512)
    return fa.FlatApproxResult(res.p_hat, res.q_full, params, P, res.max_coeff_bits)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
