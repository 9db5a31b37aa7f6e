"""Weighted-least-squares estimator and observability analysis."""

import io

import numpy as np
import pytest

from voltfill.dmatrix import (
    DataDriven, NoiseClass, RandomSampling, apply_observation_model,
)
from voltfill.wls import (
    Measurement, MeasurementKind, MeasurementSet, SIGMA_EXACT,
    UnobservableError, check_observability, measurements_from_observation,
    wls_estimate,
)


def _exact_measurements(net, sol, sigma=SIGMA_EXACT):
    """Every bus magnitude and P/Q injection at its true value."""
    out = []
    for i, b in enumerate(net.buses):
        out.append(Measurement(MeasurementKind.V_MAG, b.id,
                               float(sol.vmag[i]), sigma))
        out.append(Measurement(MeasurementKind.P_INJ, b.id,
                               float(sol.s[i].real), sigma))
        out.append(Measurement(MeasurementKind.Q_INJ, b.id,
                               float(sol.s[i].imag), sigma))
    return MeasurementSet(measurements=tuple(out))


def test_exact_measurements_recover_truth(net, sol):
    est = wls_estimate(net, _exact_measurements(net, sol))
    assert np.max(np.abs(est.vmag - sol.vmag)) < 1e-6
    assert np.max(np.abs(est.angle_deg - sol.angle_deg)) < 1e-4


def test_full_set_is_observable(net, sol):
    ms = _exact_measurements(net, sol)
    observable, rank = check_observability(net, ms.measurements)
    assert observable
    assert rank == 2 * (net.n_bus - 1)


def test_empty_set_is_unobservable(net):
    observable, rank = check_observability(net, ())
    assert not observable
    assert rank == 0


def test_unobservable_raises_with_rank(net, sol):
    thin = MeasurementSet(measurements=tuple(
        m for m in _exact_measurements(net, sol).measurements[:5]))
    with pytest.raises(UnobservableError) as err:
        wls_estimate(net, thin)
    assert err.value.rank < err.value.needed
    assert err.value.needed == 2 * (net.n_bus - 1)


def test_noisy_measurements_stay_close(net, sol):
    rng = np.random.default_rng(0)
    noisy = []
    for m in _exact_measurements(net, sol).measurements:
        sigma = max(0.01 * abs(m.value), 1e-6)
        noisy.append(Measurement(m.kind, m.at,
                                 m.value * (1 + 0.01 * rng.standard_normal()),
                                 sigma))
    est = wls_estimate(net, MeasurementSet(measurements=tuple(noisy)))
    mape = 100.0 * np.mean(np.abs(est.vmag[1:] - sol.vmag[1:])
                           / sol.vmag[1:])
    assert mape < 1.0


def test_downweighted_outlier_has_little_pull(net, sol):
    base = _exact_measurements(net, sol).measurements
    bad = Measurement(MeasurementKind.P_INJ, net.buses[5].id,
                      base[16].value + 0.5, 10.0)
    est = wls_estimate(net, MeasurementSet(measurements=base + (bad,)))
    assert np.max(np.abs(est.vmag - sol.vmag)) < 1e-4


def test_current_measurements_contribute(net, sol, ctx):
    # Magnitudes plus branch currents alone pin down the state.
    out = []
    for i, b in enumerate(net.buses):
        out.append(Measurement(MeasurementKind.V_MAG, b.id,
                               float(sol.vmag[i]), SIGMA_EXACT))
    for k, br in enumerate(net.branches):
        at = (br.from_bus, br.to_bus)
        out.append(Measurement(MeasurementKind.I_RE, at,
                               float(sol.branch_i[k].real), SIGMA_EXACT))
        out.append(Measurement(MeasurementKind.I_IM, at,
                               float(sol.branch_i[k].imag), SIGMA_EXACT))
    ms = MeasurementSet(measurements=tuple(out))
    observable, rank = check_observability(net, ms.measurements)
    assert observable
    est = wls_estimate(net, ms)
    assert np.max(np.abs(est.vmag - sol.vmag)) < 1e-5


def test_observation_adapter_maps_classes(ctx, net):
    obs = apply_observation_model(ctx.matrix, DataDriven("M", "M", "P"),
                                  np.random.default_rng(1))
    ms = measurements_from_observation(obs, net)
    from voltfill.dmatrix import QuantityKind
    translatable = [q for q in obs.classes
                    if q.kind not in (QuantityKind.RE_V, QuantityKind.IM_V)]
    assert len(ms) == len(translatable)
    by_key = {(m.kind, m.at): m for m in ms.measurements}
    for q, cls in obs.classes.items():
        kind_at = [(k, a) for (k, a) in by_key if a == q.at]
        assert kind_at
        if cls is NoiseClass.EXACT:
            sigmas = [by_key[k].sigma for k in kind_at]
            assert min(sigmas) == SIGMA_EXACT
    # Pseudo-class entries carry visibly larger sigmas than measured ones.
    pseudo_sig = [m.sigma for m in ms.measurements
                  if m.sigma not in (SIGMA_EXACT,) and m.sigma > 0.002]
    assert pseudo_sig


def test_sparse_random_observation_unobservable(ctx, net):
    obs = apply_observation_model(ctx.matrix, RandomSampling(0.3),
                                  np.random.default_rng(2))
    ms = measurements_from_observation(obs, net)
    observable, rank = check_observability(net, ms.measurements)
    assert not observable
    assert rank < 2 * (net.n_bus - 1)


def test_dense_random_observation_estimates_well(ctx, net, sol):
    obs = apply_observation_model(ctx.matrix, RandomSampling(1.0),
                                  np.random.default_rng(3))
    ms = measurements_from_observation(obs, net)
    est = wls_estimate(net, ms)
    mape = 100.0 * np.mean(np.abs(est.vmag[1:] - sol.vmag[1:])
                           / sol.vmag[1:])
    assert mape < 0.5


def test_measurement_set_csv_roundtrip(net, sol):
    ms = _exact_measurements(net, sol)
    buf = io.StringIO()
    ms.write_csv(buf)
    buf.seek(0)
    again = MeasurementSet.read_csv(buf)
    assert len(again) == len(ms)
    for a, b in zip(again.measurements, ms.measurements):
        assert a.kind == b.kind
        assert a.at == b.at
        assert a.value == pytest.approx(b.value)
        assert a.sigma == pytest.approx(b.sigma)


def test_nonpositive_sigma_rejected():
    with pytest.raises(ValueError):
        Measurement(MeasurementKind.V_MAG, 1, 1.0, 0.0)
