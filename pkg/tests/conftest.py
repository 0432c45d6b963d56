import math

import numpy as np
import pytest

from inloop_optomech.model import PhysicalParams, WorkingPoint, hz_to_rad

# acceptance criterion -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture
def fig3_params():
    k = 22e3
    return PhysicalParams.from_hz(omega_m_hz=343.13e3, gamma_m_hz=1.18, kappa_hz=k,
                                  kappa0_hz=0.65 * k, kappa_prime_hz=0.175 * k,
                                  delta0_hz=330e3, g0_hz=1.8, eta=0.5, temperature=300.0,
                                  pump_power=10e-6)


@pytest.fixture
def fig3_wp(fig3_params):
    return WorkingPoint.from_coupling(fig3_params, hz_to_rad(3836.0), hz_to_rad(330e3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
