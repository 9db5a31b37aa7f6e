"""Newton power-flow solver correctness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voltfill.network import build_admittance
from voltfill.powerflow import (
    PowerFlowError, branch_currents, slack_injection, solve_power_flow,
)


def _mismatch(net, sol):
    """Recompute max power mismatch at non-slack buses from scratch."""
    y = build_admittance(net).full()
    s = sol.v * np.conj(y @ sol.v)
    spec = net.injections()[1:]
    return np.max(np.abs(s[1:] - spec))


def test_calibrated_case_solves(net):
    sol = solve_power_flow(net)
    assert sol.mismatch < 1e-10
    assert _mismatch(net, sol) < 1e-10
    assert sol.v[0] == net.slack_voltage
    assert sol.iterations <= 10


def test_raw_case_solves(raw_net):
    sol = solve_power_flow(raw_net)
    assert _mismatch(raw_net, sol) < 1e-10
    # Classic end-of-feeder sag for this network.
    assert 0.91 < sol.vmag.min() < 0.92


def test_voltage_band_of_calibrated_case(net):
    vm = solve_power_flow(net).vmag
    assert vm.min() > 0.985
    assert vm.max() < 1.025


def test_zero_injection_gives_flat_profile(net):
    sol = solve_power_flow(net, np.zeros(net.n_bus - 1, dtype=complex))
    assert np.allclose(sol.v, net.slack_voltage, atol=1e-10)
    assert np.max(np.abs(sol.s)) < 1e-10


def test_slack_balances_losses(net):
    sol = solve_power_flow(net)
    blocks = build_admittance(net)
    s1 = slack_injection(blocks, sol.v)
    assert s1 == pytest.approx(sol.s[0], abs=1e-10)
    # Slack active power covers net demand plus positive line losses.
    demand = -np.sum(net.injections()[1:].real)
    losses = s1.real - demand
    assert 0 < losses < 0.25 * demand


def test_branch_currents_match_injections(net):
    sol = solve_power_flow(net)
    flows = branch_currents(net, sol.v)
    assert np.allclose(flows, sol.branch_i)
    # Current balance at every non-slack bus: sum of incident branch
    # currents (oriented away from the bus) equals the injected current.
    inj_i = np.conj(sol.s / sol.v)
    for k, bus in enumerate(net.buses[1:], start=1):
        total = 0j
        for br_idx, br in enumerate(net.branches):
            vf = sol.v[net.index(br.from_bus)]
            vt = sol.v[net.index(br.to_bus)]
            if br.from_bus == bus.id:
                total += flows[br_idx]
            elif br.to_bus == bus.id:
                total += (vt - vf) * br.y_series + vt * br.y_shunt / 2
        assert total == pytest.approx(inj_i[k], abs=1e-9)


def test_determinism(net):
    a = solve_power_flow(net)
    b = solve_power_flow(net)
    assert np.array_equal(a.v, b.v)
    assert a.iterations == b.iterations


def test_divergence_raises(net):
    with pytest.raises(PowerFlowError):
        solve_power_flow(net, net.injections()[1:] * 50.0)


@settings(max_examples=15)
@given(scale=st.floats(0.2, 1.6), seed=st.integers(0, 10_000))
def test_scaled_loadings_solve_tightly(net, scale, seed):
    rng = np.random.default_rng(seed)
    jitter = 1.0 + 0.1 * rng.standard_normal(net.n_bus - 1)
    inj = net.injections()[1:] * scale * jitter
    sol = solve_power_flow(net, inj)
    y = build_admittance(net).full()
    s = sol.v * np.conj(y @ sol.v)
    assert np.max(np.abs(s[1:] - inj)) < 1e-8
