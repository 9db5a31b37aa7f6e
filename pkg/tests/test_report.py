"""CSV export and figure rendering."""

import csv

import numpy as np
import pytest

from voltfill.bench import EstimationRecord, StepRecord, SweepCell, SweepResult
from voltfill.report import (
    estimate_rows, linearization_rows, render_augmentation_figure,
    render_availability_figure, render_scenario_figure,
    render_timeseries_figure, solved_state_rows, write_csv,
)


def _cell(label, x, mapes, maes):
    runs = tuple(
        EstimationRecord(scenario=label, seed=i, estimator="mc",
                         magnitude_mape=m, angle_mae=a, estimate=None,
                         truth=None, diagnostics={"converged": True},
                         error=None, wall_time=0.01)
        for i, (m, a) in enumerate(zip(mapes, maes)))
    return SweepCell(label=label, x=x, runs=runs)


@pytest.fixture()
def sweep():
    return SweepResult(cells=(
        _cell("random-0.3", 0.3, [1.2, 1.4, 1.1], [0.3, 0.25, 0.4]),
        _cell("random-0.6", 0.6, [0.5, 0.6, 0.4], [0.1, 0.12, 0.15]),
        _cell("codes-MMM", 1.0, [0.2, 0.3, 0.25], [0.05, 0.04, 0.06]),
    ))


def test_write_csv_union_header(tmp_path):
    path = write_csv(tmp_path / "a" / "b.csv",
                     [{"x": 1, "y": 2}, {"x": 3, "z": 4}])
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0] == {"x": "1", "y": "2", "z": ""}
    assert rows[1] == {"x": "3", "y": "", "z": "4"}


def test_write_csv_empty(tmp_path):
    path = write_csv(tmp_path / "empty.csv", [])
    assert path.exists()


def test_solved_state_rows(net, sol):
    rows = solved_state_rows(net, sol)
    assert len(rows) == net.n_bus
    assert rows[0]["bus"] == net.buses[0].id
    assert rows[0]["vmag_pu"] == pytest.approx(1.0)
    assert rows[0]["angle_deg"] == pytest.approx(0.0)
    vm = [r["vmag_pu"] for r in rows]
    assert np.allclose(vm, sol.vmag)


def test_linearization_rows(ctx, net, sol):
    from voltfill.linear import predict_voltages
    _, vmag = predict_voltages(ctx.model, net.injections()[1:])
    rows = linearization_rows(net, sol, ctx.model, vmag)
    assert len(rows) == net.n_bus - 1
    assert max(r["vmag_err_pct"] for r in rows) < 0.5


def test_estimate_rows(ctx):
    from voltfill.bench import bench_solver_config, estimate_once
    from voltfill.dmatrix import RandomSampling
    rec = estimate_once(ctx, RandomSampling(0.8), 1,
                        cfg=bench_solver_config(max_iter=500))
    rows = estimate_rows(rec)
    assert len(rows) == len(ctx.net.buses)
    for r in rows:
        assert abs(r["vmag_pu"] - r["vmag_true_pu"]) < 0.05


def test_availability_figure(sweep, tmp_path):
    out = render_availability_figure(sweep, tmp_path / "fig2.png")
    assert out.exists() and out.stat().st_size > 5000


def test_scenario_figure(sweep, tmp_path):
    out = render_scenario_figure(sweep, tmp_path / "fig3.png")
    assert out.exists() and out.stat().st_size > 5000


def test_augmentation_figure(tmp_path):
    rng = np.random.default_rng(0)
    rows = [{"seed": i, "sensors_added": int(rng.integers(25, 45)),
             "mc_mape_pct": float(rng.uniform(0.1, 0.4)),
             "mc_mae_deg": 0.1, "wls_mape_pct": float(rng.uniform(0.5, 2.0)),
             "wls_mae_deg": 0.2, "wls_error": ""} for i in range(10)]
    rows[3]["wls_error"] = "did not settle"
    out = render_augmentation_figure(rows, tmp_path / "fig4.png")
    assert out.exists() and out.stat().st_size > 5000


def test_timeseries_figure(tmp_path):
    rng = np.random.default_rng(1)
    records = [
        StepRecord(step=t, magnitude_mape=float(rng.uniform(0.2, 0.6)),
                   angle_mae=0.1, ref_magnitude_mape=float(rng.uniform(0.2, 0.5)),
                   ref_angle_mae=0.1, n_observed=80, n_lost=16,
                   mismatch=1e-12)
        for t in range(12)
    ]
    out = render_timeseries_figure(records, tmp_path / "ts.png")
    assert out.exists() and out.stat().st_size > 5000
