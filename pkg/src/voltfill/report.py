"""Result export: CSV writers for every harness output and the figure
renderers that accompany them (PNG, rendered headlessly)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_csv(path, rows):
    """Write dict rows; the header is the union of keys in first-seen
    order so heterogeneous rows stay readable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = []
    for row in rows:
        for key in row:
            if key not in header:
                header.append(key)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def solved_state_rows(net, sol):
    rows = []
    for k, bus in enumerate(net.buses):
        rows.append({
            "bus": bus.id,
            "category": bus.category.name.lower(),
            "vmag_pu": np.abs(sol.v[k]),
            "angle_deg": np.rad2deg(np.angle(sol.v[k])),
            "p_inj_pu": sol.s[k].real,
            "q_inj_pu": sol.s[k].imag,
        })
    return rows


def linearization_rows(net, sol, model, predicted):
    rows = []
    for k, bus in enumerate(net.buses[1:]):
        exact = sol.v[k + 1]
        rows.append({
            "bus": bus.id,
            "vmag_exact_pu": np.abs(exact),
            "vmag_linear_pu": np.abs(predicted[k]),
            "vmag_err_pct": 100.0 * abs(np.abs(predicted[k]) - np.abs(exact))
                            / np.abs(exact),
            "zero_load_vmag_pu": np.abs(model.w[k]),
        })
    return rows


def estimate_rows(record):
    est = record.estimate
    rows = []
    for k, bus_id in enumerate(est.bus_ids):
        truth = record.truth[k]
        rows.append({
            "bus": bus_id,
            "vmag_pu": est.vmag[k],
            "angle_deg": est.angle_deg[k],
            "vmag_true_pu": np.abs(truth),
            "angle_true_deg": np.rad2deg(np.angle(truth)),
        })
    return rows


# ---------------------------------------------------------------------------
# Figures

def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_availability_figure(sweep, path):
    """Median accuracy vs observed fraction, with interquartile bands."""
    xs = [c.x * 100.0 for c in sweep.cells]
    med = [c.stat("magnitude_mape", "median") for c in sweep.cells]
    q1 = [np.nanpercentile(c._vals("magnitude_mape"), 25)
          for c in sweep.cells]
    q3 = [np.nanpercentile(c._vals("magnitude_mape"), 75)
          for c in sweep.cells]
    mae = [c.stat("angle_mae", "median") for c in sweep.cells]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.fill_between(xs, q1, q3, alpha=0.25, color="tab:blue",
                    label="magnitude IQR")
    ax.plot(xs, med, "o-", color="tab:blue", label="magnitude MAPE")
    ax.set_xlabel("observed share of potentially known quantities (%)")
    ax.set_ylabel("voltage magnitude MAPE (%)", color="tab:blue")
    ax.grid(True, alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(xs, mae, "s--", color="tab:red", label="angle MAE")
    ax2.set_ylabel("voltage angle MAE (deg)", color="tab:red")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="upper right")
    ax.set_title("Estimation accuracy vs data availability")
    return _finish(fig, path)


def render_scenario_figure(sweep, path):
    """Per-scenario median accuracy bars (log scale: the unmeasured-solar
    cases sit an order of magnitude above the rest)."""
    labels = [c.label.replace("codes-", "") for c in sweep.cells]
    mape = [c.stat("magnitude_mape", "median") for c in sweep.cells]
    mae = [c.stat("angle_mae", "median") for c in sweep.cells]
    x = np.arange(len(labels))
    fig, axes = plt.subplots(1, 2, figsize=(8.6, 4.0))
    axes[0].bar(x, mape, color="tab:blue")
    axes[0].set_yscale("log")
    axes[0].set_ylabel("magnitude MAPE (%), log scale")
    axes[1].bar(x, mae, color="tab:red")
    axes[1].set_yscale("log")
    axes[1].set_ylabel("angle MAE (deg), log scale")
    for ax in axes:
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_xlabel("sensing codes (solar / large loads / small loads)")
        ax.grid(True, axis="y", alpha=0.3)
    fig.suptitle("Category-driven sensing scenarios")
    return _finish(fig, path)


def render_augmentation_figure(rows, path):
    """Completion on raw sensing vs classical estimation after sensor
    augmentation, plus the distribution of sensors added."""
    mc_mape = [r["mc_mape_pct"] for r in rows]
    wls_mape = [r["wls_mape_pct"] for r in rows if not r["wls_error"]]
    added = [r["sensors_added"] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(8.6, 4.0))
    axes[0].boxplot([mc_mape, wls_mape],
                    tick_labels=["completion\n(raw sensing)",
                                 "least squares\n(augmented)"])
    axes[0].set_ylabel("magnitude MAPE (%)")
    axes[0].grid(True, axis="y", alpha=0.3)
    axes[1].hist(added, bins=range(min(added), max(added) + 2),
                 color="tab:green", alpha=0.8)
    axes[1].set_xlabel("sensors added for observability")
    axes[1].set_ylabel("runs")
    axes[1].grid(True, axis="y", alpha=0.3)
    fig.suptitle("Sensor augmentation to full observability")
    return _finish(fig, path)


def render_timeseries_figure(records, path):
    steps = [r.step for r in records]
    fig, ax = plt.subplots(figsize=(7.2, 4.0))
    ax.plot(steps, [r.ref_magnitude_mape for r in records], "-",
            color="tab:blue", label="no loss")
    ax.plot(steps, [r.magnitude_mape for r in records], "-",
            color="tab:orange", label="with data loss")
    ax.set_xlabel("time step")
    ax.set_ylabel("magnitude MAPE (%)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    ax.set_title("Time-series accuracy under communication loss")
    return _finish(fig, path)
