"""First-order voltage model: structure, exactness limits, accuracy."""

import numpy as np
import pytest

from voltfill.linear import (
    build_linear_model, injection_stack, predict_voltages,
    zero_load_voltage,
)
from voltfill.network import build_admittance
from voltfill.powerflow import solve_power_flow


@pytest.fixture(scope="module")
def blocks(net):
    return build_admittance(net)


@pytest.fixture(scope="module")
def model(net, blocks):
    return build_linear_model(blocks, net.slack_voltage)


def test_zero_load_profile_is_flat(net, blocks):
    w = zero_load_voltage(blocks, net.slack_voltage)
    # Shunt-free feeder: zero injections leave every bus at the slack
    # voltage exactly.
    assert np.allclose(w, net.slack_voltage, atol=1e-12)
    # And w satisfies the defining linear system.
    res = blocks.yll @ w + blocks.yl1 * net.slack_voltage
    assert np.max(np.abs(res)) < 1e-12


def test_prediction_at_zero_injection(model):
    v, vmag = predict_voltages(model, np.zeros(len(model.w)))
    assert np.array_equal(v, model.w)
    assert np.array_equal(vmag, np.abs(model.w))


def test_shapes_and_realness(net, model):
    n = net.n_bus - 1
    assert model.a.shape == (n, 2 * n)
    assert model.c.shape == (n, 2 * n)
    assert model.c.dtype.kind == "f"
    assert injection_stack(np.ones(n) * (1 + 2j)).shape == (2 * n,)


def test_magnitude_coeffs_are_derivative_of_abs(model):
    # C must be the exact first-order magnitude response of A at v_hat.
    n = len(model.w)
    rng = np.random.default_rng(7)
    direction = rng.standard_normal(2 * n)
    eps = 1e-7
    base = np.abs(model.v_hat)
    grown = np.abs(model.v_hat + model.a @ (eps * direction))
    fd = (grown - base) / eps
    assert np.allclose(model.c @ direction, fd, atol=1e-5)


def test_accuracy_at_nominal_loading(net, model):
    sol = solve_power_flow(net)
    s_inj = net.injections()[1:]
    v_lin, vmag_lin = predict_voltages(model, s_inj)
    err_pct = 100.0 * np.abs(vmag_lin - sol.vmag[1:]) / sol.vmag[1:]
    assert err_pct.max() < 0.5
    # Complex-voltage error is small too (magnitude plus angle).
    assert np.max(np.abs(v_lin - sol.v[1:])) < 0.005


def test_error_shrinks_quadratically(net, model):
    s_inj = net.injections()[1:]

    def err(t):
        sol = solve_power_flow(net, t * s_inj)
        v_lin, _ = predict_voltages(model, t * s_inj)
        return np.max(np.abs(v_lin - sol.v[1:]))

    e_full, e_half = err(1.0), err(0.5)
    assert e_half < 0.35 * e_full


def test_rebuilt_around_solution_improves_fit(net, blocks):
    sol = solve_power_flow(net)
    s_inj = net.injections()[1:]
    flat = build_linear_model(blocks, net.slack_voltage)
    tuned = build_linear_model(blocks, net.slack_voltage, v_hat=sol.v[1:])
    e_flat = np.max(np.abs(predict_voltages(flat, s_inj)[0] - sol.v[1:]))
    e_tuned = np.max(np.abs(predict_voltages(tuned, s_inj)[0] - sol.v[1:]))
    assert e_tuned < e_flat
