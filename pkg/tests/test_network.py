"""Case parsing, network validation, and admittance construction."""

import numpy as np
import pytest

from voltfill.network import (
    BusCategory, CaseError, N_LARGE_LOADS, build_admittance, parse_case,
    parse_matpower, serialize_case,
)
from voltfill.cases import load_case

MPC_3BUS = """\
function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t12.66\t1\t1.1\t0.9;
\t2\t1\t100\t60\t0\t0\t1\t1\t0\t12.66\t1\t1.1\t0.9;
\t3\t1\t90\t40\t0\t0\t1\t1\t0\t12.66\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t0\t0\t10\t-10\t1\t100\t1\t10\t0;
];
mpc.branch = [
\t1\t2\t0.0922\t0.047\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t2\t3\t0.0493\t0.2511\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
];
"""


def _native(bus_rows, branch_rows):
    lines = ["[system]", "name = t", "base_mva = 100.0",
             "base_kv = 12.66", "slack_bus = 1", "[buses]"]
    lines += bus_rows
    lines += ["[branches]"]
    lines += branch_rows
    return "\n".join(lines) + "\n"


def test_bundled_case_shape(net):
    assert net.n_bus == 33
    assert net.n_branch == 32
    assert net.is_radial
    assert net.buses[0].category == BusCategory.SLACK
    cats = [b.category for b in net.buses]
    assert cats.count(BusCategory.SOLAR) == 3
    assert cats.count(BusCategory.LARGE_LOAD) == N_LARGE_LOADS


def test_solar_buses_have_generation(net):
    for b in net.buses:
        if b.category == BusCategory.SOLAR:
            assert b.generation != 0
        else:
            assert b.generation == 0


def test_large_loads_are_largest(net):
    mags = sorted((abs(b.load) for b in net.buses[1:]), reverse=True)
    cutoff = mags[N_LARGE_LOADS - 1]
    for b in net.buses[1:]:
        if b.category == BusCategory.LARGE_LOAD:
            assert abs(b.load) >= cutoff


def test_roundtrip_serialization(net):
    again = parse_case(serialize_case(net))
    assert again.n_bus == net.n_bus
    assert again.buses[0].id == net.buses[0].id
    for a, b in zip(again.buses, net.buses):
        assert a.id == b.id
        assert a.load == pytest.approx(b.load)
        assert a.generation == pytest.approx(b.generation)
        assert a.category == b.category
    for a, b in zip(again.branches, net.branches):
        assert (a.from_bus, a.to_bus) == (b.from_bus, b.to_bus)
        assert a.y_series == pytest.approx(b.y_series)


def test_raw_and_calibrated_differ(net, raw_net):
    assert raw_net.n_bus == net.n_bus
    raw_load = abs(sum(b.load for b in raw_net.buses))
    cal_load = abs(sum(b.load for b in net.buses))
    assert cal_load > raw_load
    assert all(b.generation == 0 for b in raw_net.buses)


def test_matpower_parser():
    n = parse_matpower(MPC_3BUS)
    assert n.n_bus == 3
    assert n.buses[0].id == 1
    b2 = next(b for b in n.buses if b.id == 2)
    assert b2.load == pytest.approx(1.0 + 0.6j)  # per-unit on 100 MVA
    br = n.branches[0]
    assert br.z_series == pytest.approx(0.0922 + 0.047j)


def test_parse_errors_carry_line_numbers():
    with pytest.raises(CaseError) as err:
        parse_case("[system]\nbase_mva = 100\n[bogus]\n")
    assert "line 3" in str(err.value)


def test_bad_row_width_rejected():
    text = _native(["1 0 0 0 0 0 0", "2 100 60 0 0"], ["1 2 0.1 0.2 0"])
    with pytest.raises(CaseError) as err:
        parse_case(text)
    assert "7 fields" in str(err.value)


def test_disconnected_network_rejected():
    text = _native(
        ["1 0 0 0 0 0 0", "2 100 60 0 0 0 0", "3 90 40 0 0 0 0"],
        ["1 2 0.1 0.2 0"])
    with pytest.raises(CaseError, match="connected"):
        parse_case(text)


def test_duplicate_bus_rejected():
    text = _native(["1 0 0 0 0 0 0", "1 100 60 0 0 0 0"],
                   ["1 1 0.1 0.2 0"])
    with pytest.raises(CaseError):
        parse_case(text)


def test_zero_impedance_branch_rejected():
    text = _native(["1 0 0 0 0 0 0", "2 100 60 0 0 0 0"],
                   ["1 2 0 0 0"])
    with pytest.raises(CaseError, match="impedance"):
        parse_case(text)


def test_admittance_blocks_consistent(net):
    blocks = build_admittance(net)
    y = blocks.full()
    n = net.n_bus
    assert y.shape == (n, n)
    # No shunt elements in this feeder: every row of Y sums to zero.
    assert np.max(np.abs(y @ np.ones(n))) < 1e-9
    assert np.allclose(y, y.T)
    # Block solve agrees with a dense solve against the lower-right block.
    rhs = np.arange(1, n) + 1j * np.ones(n - 1)
    assert np.allclose(blocks.solve(rhs), np.linalg.solve(y[1:, 1:], rhs))


def test_admittance_matches_hand_built():
    n = parse_matpower(MPC_3BUS)
    y = build_admittance(n).full()
    y12 = 1.0 / (0.0922 + 0.047j)
    assert y[0, 1] == pytest.approx(-y12)
    assert y[0, 0] == pytest.approx(y12)


def test_load_case_rejects_unknown_name():
    with pytest.raises((CaseError, FileNotFoundError, ValueError)):
        load_case("no-such-case")
