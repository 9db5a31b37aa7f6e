"""Radial feeder model: case files, per-unit conversion, admittance blocks.

The native case format is a plain-text document with three sections::

    [system]
    name = feeder33
    base_mva = 10.0
    base_kv = 12.66
    slack_bus = 1
    slack_voltage_pu = 1.0
    slack_angle_deg = 0.0

    [buses]
    # id  load_kw  load_kvar  gen_kw  gen_kvar  shunt_g_pu  shunt_b_pu
    1     0.0      0.0        0.0     0.0       0.0         0.0

    [branches]
    # from  to  r_ohm  x_ohm  charging_b_pu
    1       2   0.0922 0.0470 0.0

Loads and generation are in kW / kvar, branch impedances in ohms, bus and
line-charging shunts in per-unit admittance on the system base.  '#' starts
a comment.  Internally everything is stored in per-unit on base_mva.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class CaseError(ValueError):
    """Raised for malformed case input; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BusCategory(enum.Enum):
    SLACK = "slack"
    SOLAR = "solar"
    LARGE_LOAD = "large_load"
    SMALL_LOAD = "small_load"


@dataclass(frozen=True)
class Bus:
    """Single bus; load/generation are complex powers in p.u., shunt is a
    complex admittance in p.u."""

    id: int
    load: complex = 0j
    generation: complex = 0j
    shunt: complex = 0j
    category: BusCategory = BusCategory.SMALL_LOAD

    @property
    def injection(self):
        """Net complex power injected at the bus (generation minus load)."""
        return self.generation - self.load


@dataclass(frozen=True)
class Branch:
    """Series element between two buses.

    y_series is the inverse of the series impedance; y_shunt is the total
    line-charging admittance, split half per end when building the
    admittance matrix.  Both in p.u.
    """

    from_bus: int
    to_bus: int
    y_series: complex
    y_shunt: complex = 0j

    @property
    def z_series(self):
        return 1.0 / self.y_series


@dataclass(frozen=True)
class Network:
    """Validated network.  buses[0] is always the slack bus regardless of
    the order in the source file; original ids are preserved on each Bus."""

    buses: tuple
    branches: tuple
    base_mva: float
    base_kv: float
    slack_voltage: complex
    name: str = "case"

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        if not self.buses:
            raise CaseError("empty bus table")
        if self.buses[0].category is not BusCategory.SLACK:
            raise CaseError("first bus after reordering must be the slack")
        if sum(1 for b in self.buses if b.category is BusCategory.SLACK) != 1:
            raise CaseError("exactly one slack bus required")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseError(
                    f"branch {br.from_bus}-{br.to_bus} references unknown bus")
            if br.from_bus == br.to_bus:
                raise CaseError(f"self-loop at bus {br.from_bus}")
        if self.base_mva <= 0 or self.base_kv <= 0:
            raise CaseError("system bases must be positive")
        if not 0.9 <= abs(self.slack_voltage) <= 1.1:
            raise CaseError("slack voltage magnitude outside [0.9, 1.1] p.u.")
        if not self._connected():
            raise CaseError("network is not connected")

    def _connected(self):
        adj = {b.id: set() for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen = {self.buses[0].id}
        stack = [self.buses[0].id]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(self.buses)

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_branch(self):
        return len(self.branches)

    @property
    def is_radial(self):
        return self.n_branch == self.n_bus - 1

    def index(self, bus_id):
        """Internal position of a bus id (slack is always 0)."""
        return self._index_map[bus_id]

    @property
    def _index_map(self):
        # id -> position cache; cheap enough to rebuild on a frozen instance
        try:
            return object.__getattribute__(self, "_idx")
        except AttributeError:
            idx = {b.id: k for k, b in enumerate(self.buses)}
            object.__setattr__(self, "_idx", idx)
            return idx

    def injections(self):
        """Net complex injection per bus (internal order, slack included)."""
        return np.array([b.injection for b in self.buses], dtype=complex)

    def degree(self, bus_id):
        return sum(1 for br in self.branches
                   if bus_id in (br.from_bus, br.to_bus))

    def branches_at(self, bus_id):
        return [br for br in self.branches
                if bus_id in (br.from_bus, br.to_bus)]


@dataclass(frozen=True)
class AdmittanceBlocks:
    """Bus admittance matrix partitioned around the slack bus.

    y11 is the slack self-admittance, y1l the row coupling slack to the
    remaining buses, yl1 its column counterpart and yll the non-slack
    square block.  yll is LU-factorized once at build time; solve() reuses
    the factorization (the inverse is never formed explicitly).
    """

    y11: complex
    y1l: np.ndarray
    yl1: np.ndarray
    yll: np.ndarray
    _lu: tuple = field(repr=False, default=None)

    def full(self):
        n = self.yll.shape[0] + 1
        y = np.empty((n, n), dtype=complex)
        y[0, 0] = self.y11
        y[0, 1:] = self.y1l
        y[1:, 0] = self.yl1
        y[1:, 1:] = self.yll
        return y

    def solve(self, rhs):
        """Solve yll @ x = rhs."""
        return scipy.linalg.lu_solve(self._lu, rhs)


def build_admittance(net):
    """Assemble the admittance matrix in slack-first order and partition it.

    Raises CaseError if the non-slack block is numerically singular.
    """
    n = net.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        f, t = net.index(br.from_bus), net.index(br.to_bus)
        y[f, f] += br.y_series + br.y_shunt / 2
        y[t, t] += br.y_series + br.y_shunt / 2
        y[f, t] -= br.y_series
        y[t, f] -= br.y_series
    for k, bus in enumerate(net.buses):
        y[k, k] += bus.shunt
    yll = y[1:, 1:].copy()
    lu, piv = scipy.linalg.lu_factor(yll)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        raise CaseError("non-slack admittance block is singular")
    return AdmittanceBlocks(
        y11=y[0, 0], y1l=y[0, 1:].copy(), yl1=y[1:, 0].copy(),
        yll=yll, _lu=(lu, piv))


# ---------------------------------------------------------------------------
# Category assignment

N_LARGE_LOADS = 6  # buses with the largest apparent load power


def assign_categories(buses, slack_id):
    """Return buses with categories filled in.

    Slack by id, solar wherever generation is nonzero, then the
    N_LARGE_LOADS largest remaining loads by apparent power (ties broken by
    bus id); everything else is a small load.
    """
    ranked = sorted(
        (b for b in buses if b.id != slack_id and b.generation == 0),
        key=lambda b: (-abs(b.load), b.id))
    large = {b.id for b in ranked[:N_LARGE_LOADS]}

    def cat(b):
        if b.id == slack_id:
            return BusCategory.SLACK
        if b.generation != 0:
            return BusCategory.SOLAR
        if b.id in large:
            return BusCategory.LARGE_LOAD
        return BusCategory.SMALL_LOAD

    return [Bus(b.id, b.load, b.generation, b.shunt, cat(b)) for b in buses]


# ---------------------------------------------------------------------------
# Native format

_SECTIONS = ("system", "buses", "branches")


def parse_case(text):
    """Parse the native case format into a Network."""
    system = {}
    bus_rows = []
    branch_rows = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise CaseError(f"unknown section [{section}]", lineno)
            continue
        if section == "system":
            if "=" not in line:
                raise CaseError("expected key = value", lineno)
            key, _, value = line.partition("=")
            system[key.strip()] = value.strip()
        elif section == "buses":
            bus_rows.append((lineno, line.split()))
        elif section == "branches":
            branch_rows.append((lineno, line.split()))
        else:
            raise CaseError("content before first section header", lineno)

    def need(key):
        if key not in system:
            raise CaseError(f"missing system key '{key}'")
        return system[key]

    try:
        base_mva = float(need("base_mva"))
        base_kv = float(need("base_kv"))
        slack_id = int(need("slack_bus"))
        vmag = float(system.get("slack_voltage_pu", "1.0"))
        vang = float(system.get("slack_angle_deg", "0.0"))
    except ValueError as exc:
        raise CaseError(f"bad system value: {exc}") from None
    slack_voltage = vmag * np.exp(1j * np.deg2rad(vang))

    buses = []
    for lineno, fields in bus_rows:
        if len(fields) != 7:
            raise CaseError("bus row needs 7 fields", lineno)
        try:
            bid = int(fields[0])
            nums = [float(x) for x in fields[1:]]
        except ValueError:
            raise CaseError("bad numeric field in bus row", lineno) from None
        load = (nums[0] + 1j * nums[1]) / (1000.0 * base_mva)
        gen = (nums[2] + 1j * nums[3]) / (1000.0 * base_mva)
        shunt = nums[4] + 1j * nums[5]
        buses.append(Bus(bid, load, gen, shunt))

    z_base = base_kv ** 2 / base_mva
    branches = []
    for lineno, fields in branch_rows:
        if len(fields) != 5:
            raise CaseError("branch row needs 5 fields", lineno)
        try:
            f, t = int(fields[0]), int(fields[1])
            r, x, b = (float(v) for v in fields[2:])
        except ValueError:
            raise CaseError("bad numeric field in branch row", lineno) from None
        z = (r + 1j * x) / z_base
        if z == 0:
            raise CaseError("zero-impedance branch", lineno)
        branches.append(Branch(f, t, 1.0 / z, 1j * b))

    buses = assign_categories(buses, slack_id)
    ordered = ([b for b in buses if b.id == slack_id]
               + [b for b in buses if b.id != slack_id])
    if not ordered or ordered[0].id != slack_id:
        raise CaseError(f"slack bus {slack_id} not present in bus table")
    return Network(
        buses=tuple(ordered), branches=tuple(branches),
        base_mva=base_mva, base_kv=base_kv, slack_voltage=slack_voltage,
        name=system.get("name", "case"))


def _fmt(x):
    """Shortest exact decimal form; normalizes numpy scalars to float."""
    return repr(float(x))


def serialize_case(net):
    """Write a Network back to the native format (parse round-trips to the
    same per-unit data within float formatting precision)."""
    z_base = net.base_kv ** 2 / net.base_mva
    ang = np.rad2deg(np.angle(net.slack_voltage))
    out = ["[system]",
           f"name = {net.name}",
           f"base_mva = {_fmt(net.base_mva)}",
           f"base_kv = {_fmt(net.base_kv)}",
           f"slack_bus = {net.buses[0].id}",
           f"slack_voltage_pu = {_fmt(abs(net.slack_voltage))}",
           f"slack_angle_deg = {_fmt(ang)}",
           "",
           "[buses]",
           "# id  load_kw  load_kvar  gen_kw  gen_kvar  shunt_g_pu  shunt_b_pu"]
    scale = 1000.0 * net.base_mva
    for b in sorted(net.buses, key=lambda b: b.id):
        out.append("  ".join([
            str(b.id),
            _fmt(b.load.real * scale), _fmt(b.load.imag * scale),
            _fmt(b.generation.real * scale), _fmt(b.generation.imag * scale),
            _fmt(b.shunt.real), _fmt(b.shunt.imag)]))
    out += ["", "[branches]", "# from  to  r_ohm  x_ohm  charging_b_pu"]
    for br in net.branches:
        z = br.z_series * z_base
        out.append("  ".join([
            str(br.from_bus), str(br.to_bus),
            _fmt(z.real), _fmt(z.imag), _fmt(br.y_shunt.imag)]))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# MATPOWER import

def _matpower_table(text, name):
    m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\]\s*;" % name, text, re.S)
    if m is None:
        return None
    rows = []
    for raw in m.group(1).replace(";", "\n").splitlines():
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        rows.append([float(v) for v in line.replace(",", " ").split()])
    return rows


def parse_matpower(text):
    """Import a MATPOWER-style case from plain text.

    Reads mpc.baseMVA, mpc.bus, mpc.branch and (optionally) mpc.gen; only
    the columns needed for a single-voltage feeder model are used.  Branch
    impedances are already per-unit in this format.
    """
    m = re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;", text)
    if m is None:
        raise CaseError("missing mpc.baseMVA")
    base_mva = float(m.group(1))
    bus_rows = _matpower_table(text, "bus")
    branch_rows = _matpower_table(text, "branch")
    if not bus_rows or not branch_rows:
        raise CaseError("missing mpc.bus or mpc.branch table")

    gen = {}
    for row in _matpower_table(text, "gen") or []:
        gen[int(row[0])] = gen.get(int(row[0]), 0j) + (row[1] + 1j * row[2])

    slack_id = None
    base_kv = None
    buses = []
    for row in bus_rows:
        bid, bustype = int(row[0]), int(row[1])
        if bustype == 3:
            slack_id = bid
        if base_kv is None and len(row) >= 10 and row[9] > 0:
            base_kv = row[9]
        load = (row[2] + 1j * row[3]) / base_mva
        shunt = (row[4] + 1j * row[5]) / base_mva if len(row) >= 6 else 0j
        g = gen.get(bid, 0j) / base_mva if bid != slack_id else 0j
        buses.append(Bus(bid, load, g, shunt))
    if slack_id is None:
        raise CaseError("no slack (type 3) bus in mpc.bus")
    # the slack row may precede the type flag scan; drop its gen entry too
    buses = [Bus(b.id, b.load, 0j if b.id == slack_id else b.generation,
                 b.shunt) for b in buses]

    branches = []
    for row in branch_rows:
        z = row[2] + 1j * row[3]
        if z == 0:
            raise CaseError(f"zero-impedance branch {int(row[0])}-{int(row[1])}")
        branches.append(Branch(int(row[0]), int(row[1]), 1.0 / z,
                               1j * row[4] if len(row) >= 5 else 0j))

    buses = assign_categories(buses, slack_id)
    ordered = ([b for b in buses if b.id == slack_id]
               + [b for b in buses if b.id != slack_id])
    return Network(
        buses=tuple(ordered), branches=tuple(branches),
        base_mva=base_mva, base_kv=base_kv or 1.0,
        slack_voltage=1.0 + 0j, name="matpower")
