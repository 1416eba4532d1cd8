import numpy as np
import pytest

from optospring import model

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Record a PASS/FAIL line for an acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {str(number):>3}: {'PASS' if passed else 'FAIL'}  {detail}"
        key = str(number)
        digits = "".join(ch for ch in key if ch.isdigit())
        request.config.stash[ACCEPTANCE_LINES].append(((int(digits), key), line))
        print(line)
        return passed

    return record


@pytest.fixture(scope="session")
def cfg():
    return model.paper_defaults()


@pytest.fixture(scope="session")
def osc(cfg):
    return cfg.osc


@pytest.fixture(scope="session")
def couple_drive(cfg):
    return cfg.drive.with_(nbar=8.0, delta_pc=model.TWO_PI * 1.4e6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def draw_stable_config(rng, cfg):
    """Random oscillator pair and drive in a moderate, linearly stable range.

    Frequencies, widths, couplings and photon numbers stay within the regime
    where the rotating-wave moment model is accurate: couplings up to the
    default g, n̄ up to 5 and |Δ_pc| up to κ/2.
    """
    from dataclasses import replace

    from optospring import ampmodel
    from optospring.errors import Unstable

    tp = model.TWO_PI
    while True:
        o1 = replace(
            cfg.osc[0],
            omega=tp * rng.uniform(80e3, 140e3),
            gamma=tp * rng.uniform(0.5e3, 3e3),
            g=tp * rng.uniform(5e3, 24e3),
            nu_th=rng.uniform(0.5, 5),
        )
        o2 = replace(
            cfg.osc[1],
            omega=o1.omega + tp * rng.uniform(3e3, 15e3),
            gamma=tp * rng.uniform(0.5e3, 3e3),
            g=tp * rng.uniform(5e3, 24e3),
            nu_th=rng.uniform(0.5, 5),
        )
        drive = cfg.drive.with_(nbar=rng.uniform(0.5, 5), delta_pc=rng.uniform(-0.5, 0.5) * cfg.drive.kappa)
        try:
            ampmodel.check_stable(ampmodel.linear_model((o1, o2), drive))
        except Unstable:
            continue
        return (o1, o2), drive


@pytest.fixture(scope="session")
def random_stable():
    return draw_stable_config
