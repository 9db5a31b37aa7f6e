"""Bundled feeder data and calibration handling."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .config import read_kv
from .network import Bus, Network, assign_categories, parse_case, parse_matpower


def _data_text(name):
    return (resources.files("voltfill") / "data" / name).read_text()


def apply_calibration(net, load_scale, solar_kva):
    """Scale all loads and install inverter-based solar generation.

    solar_kva maps bus id -> complex kW + j*kvar (positive kvar means the
    inverter injects reactive power); categories are reassigned afterwards
    so the solar buses are classified by their generation.
    """
    kw_base = 1000.0 * net.base_mva
    buses = []
    for b in net.buses:
        gen = solar_kva.get(b.id, 0j) / kw_base
        buses.append(Bus(b.id, b.load * load_scale, gen, b.shunt))
    slack_id = net.buses[0].id
    buses = assign_categories(buses, slack_id)
    ordered = tuple([b for b in buses if b.id == slack_id]
                    + [b for b in buses if b.id != slack_id])
    return Network(buses=ordered, branches=net.branches,
                   base_mva=net.base_mva, base_kv=net.base_kv,
                   slack_voltage=net.slack_voltage, name=net.name + "-cal")


def load_case33(calibrated=True):
    """The bundled 33-bus feeder, by default at the calibrated operating
    point (scaled loads plus three solar sites; see case33_calibration.txt)."""
    net = parse_case(_data_text("case33.txt"))
    if not calibrated:
        return net
    cal = read_kv(_data_text("case33_calibration.txt"))
    solar = {}
    for key, value in cal.items():
        if key.startswith("solar_bus_") and key.endswith("_kw"):
            bus = int(key[len("solar_bus_"):-len("_kw")])
            solar[bus] = solar.get(bus, 0j) + float(value)
        elif key.startswith("solar_bus_") and key.endswith("_kvar"):
            bus = int(key[len("solar_bus_"):-len("_kvar")])
            solar[bus] = solar.get(bus, 0j) + 1j * float(value)
    return apply_calibration(net, float(cal["load_scale"]), solar)


def load_case(spec):
    """Resolve a --case argument: 'case33', 'case33-raw', or a file path
    (native format, or MATPOWER-style if the text defines mpc tables)."""
    if spec in (None, "case33"):
        return load_case33(calibrated=True)
    if spec == "case33-raw":
        return load_case33(calibrated=False)
    text = Path(spec).read_text()
    if "mpc." in text:
        return parse_matpower(text)
    return parse_case(text)
