"""Structured measurement matrices and sensor-availability scenarios.

Branch form: one row per branch with twelve columns
[Re v_f, Im v_f, |v_f|, Re s_f, Im s_f, Re v_t, Im v_t, |v_t|, Re s_t,
Im s_t, Re i, Im i].  Bus form: one row per bus with five columns
[Re v, Im v, |v|, Re s, Im s].  Every cell maps to a physical quantity;
a bus quantity appearing in several branch rows forms a duplication class
whose cells must agree.

Observation scenarios mark quantities as exactly known (substation
telemetry at the slack bus and the branches leaving it), measured
(multiplicative Gaussian noise, default 1%) or pseudo (default 10%).
Non-slack voltage phasors are never observable.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .network import BusCategory


class QuantityKind(enum.Enum):
    RE_V = "re_v"
    IM_V = "im_v"
    ABS_V = "abs_v"
    RE_S = "re_s"
    IM_S = "im_s"
    RE_I = "re_i"
    IM_I = "im_i"


_KIND_ORDER = {k: i for i, k in enumerate(QuantityKind)}
_PHASOR_KINDS = (QuantityKind.RE_V, QuantityKind.IM_V)
_CURRENT_KINDS = (QuantityKind.RE_I, QuantityKind.IM_I)


class Quantity(NamedTuple):
    """A physical quantity: kind plus bus id or (from, to) branch pair."""

    kind: QuantityKind
    at: object

    def sort_key(self):
        at = self.at if isinstance(self.at, tuple) else (self.at,)
        return (_KIND_ORDER[self.kind],) + at


class Formulation(enum.Enum):
    BRANCH = "branch"
    BUS = "bus"


# column spec: (kind, end) with end "f"/"t" resolving against the row's
# branch, "b" against the row's bus and "l" the branch itself
_BRANCH_COLUMNS = (
    (QuantityKind.RE_V, "f"), (QuantityKind.IM_V, "f"),
    (QuantityKind.ABS_V, "f"), (QuantityKind.RE_S, "f"),
    (QuantityKind.IM_S, "f"),
    (QuantityKind.RE_V, "t"), (QuantityKind.IM_V, "t"),
    (QuantityKind.ABS_V, "t"), (QuantityKind.RE_S, "t"),
    (QuantityKind.IM_S, "t"),
    (QuantityKind.RE_I, "l"), (QuantityKind.IM_I, "l"),
)
_BUS_COLUMNS = (
    (QuantityKind.RE_V, "b"), (QuantityKind.IM_V, "b"),
    (QuantityKind.ABS_V, "b"), (QuantityKind.RE_S, "b"),
    (QuantityKind.IM_S, "b"),
)


@dataclass(frozen=True)
class MatrixLayout:
    """Cell-to-quantity map for one formulation of one network."""

    formulation: Formulation
    row_keys: tuple                  # (f, t) pairs or bus ids
    bus_ids: tuple                   # internal order, slack first
    slack_bus: int
    slack_voltage: complex
    categories: dict = field(repr=False, default=None)  # bus id -> category
    cell_quantity: dict = field(repr=False, default=None)
    quantity_cells: dict = field(repr=False, default=None)

    @property
    def n1(self):
        return len(self.row_keys)

    @property
    def n2(self):
        return len(_BRANCH_COLUMNS
                   if self.formulation is Formulation.BRANCH
                   else _BUS_COLUMNS)

    @property
    def shape(self):
        return (self.n1, self.n2)

    def quantities(self):
        return sorted(self.quantity_cells, key=Quantity.sort_key)

    def representative(self, quantity):
        return self.quantity_cells[quantity][0]

    def classes(self):
        """All duplication classes (singletons included), canonical order."""
        return sorted(self.quantity_cells.values())

    def is_slack_quantity(self, q):
        if q.kind in _CURRENT_KINDS:
            return self.slack_bus in q.at
        return q.at == self.slack_bus

    def is_potentially_known(self, q):
        """Observable by some sensor: excludes slack telemetry (always
        exact, not a sensing choice) and non-slack voltage phasors."""
        if self.is_slack_quantity(q):
            return False
        return q.kind not in _PHASOR_KINDS


def _build_layout(net, formulation):
    cats = {b.id: b.category for b in net.buses}
    if formulation is Formulation.BRANCH:
        rows = tuple((br.from_bus, br.to_bus) for br in net.branches)
        columns = _BRANCH_COLUMNS
    else:
        rows = tuple(b.id for b in net.buses)
        columns = _BUS_COLUMNS
    cell_quantity = {}
    for r, key in enumerate(rows):
        for c, (kind, end) in enumerate(columns):
            if end == "f":
                at = key[0]
            elif end == "t":
                at = key[1]
            elif end == "l":
                at = key
            else:
                at = key
            cell_quantity[(r, c)] = Quantity(kind, at)
    quantity_cells = {}
    for cell in sorted(cell_quantity):
        quantity_cells.setdefault(cell_quantity[cell], []).append(cell)
    quantity_cells = {q: tuple(cells) for q, cells in quantity_cells.items()}
    return MatrixLayout(
        formulation=formulation, row_keys=rows,
        bus_ids=tuple(b.id for b in net.buses),
        slack_bus=net.buses[0].id, slack_voltage=net.slack_voltage,
        categories=cats, cell_quantity=cell_quantity,
        quantity_cells=quantity_cells)


@dataclass(frozen=True)
class DataMatrix:
    """Ground-truth matrix for a solved operating point."""

    values: np.ndarray
    layout: MatrixLayout


def _quantity_value(net, sol, q):
    if q.kind in _CURRENT_KINDS:
        for k, br in enumerate(net.branches):
            if (br.from_bus, br.to_bus) == q.at:
                i = sol.branch_i[k]
                break
        return i.real if q.kind is QuantityKind.RE_I else i.imag
    k = net.index(q.at)
    if q.kind is QuantityKind.RE_V:
        return sol.v[k].real
    if q.kind is QuantityKind.IM_V:
        return sol.v[k].imag
    if q.kind is QuantityKind.ABS_V:
        return abs(sol.v[k])
    if q.kind is QuantityKind.RE_S:
        return sol.s[k].real
    return sol.s[k].imag


def _build_matrix(net, sol, formulation):
    layout = _build_layout(net, formulation)
    values = np.zeros(layout.shape)
    for q, cells in layout.quantity_cells.items():
        x = _quantity_value(net, sol, q)
        for cell in cells:
            values[cell] = x
    return DataMatrix(values=values, layout=layout)


def build_branch_matrix(net, sol):
    """n_branch x 12 matrix over branch endpoints and flows."""
    return _build_matrix(net, sol, Formulation.BRANCH)


def build_bus_matrix(net, sol):
    """n_bus x 5 matrix of bus voltages and injections."""
    return _build_matrix(net, sol, Formulation.BUS)


def duplication_pairs(layout):
    """Equality pairs (representative cell, other cell) over all classes,
    in canonical (lexicographic) order."""
    pairs = []
    for cells in layout.classes():
        pairs.extend((cells[0], other) for other in cells[1:])
    return pairs


def singular_value_profile(values):
    """Singular values, descending."""
    return np.linalg.svd(np.asarray(values), compute_uv=False)


# ---------------------------------------------------------------------------
# Observation model

class NoiseClass(enum.Enum):
    EXACT = "exact"
    MEASUREMENT = "measurement"
    PSEUDO = "pseudo"


_CLASS_RANK = {NoiseClass.EXACT: 0, NoiseClass.MEASUREMENT: 1,
               NoiseClass.PSEUDO: 2}


@dataclass(frozen=True)
class RandomSampling:
    """A uniform random subset of the potentially known quantities,
    holding the given fraction of that list; substation telemetry is
    always present on top."""

    fraction: float
    noise_pct: float = 1.0
    pseudo_pct: float = 10.0


@dataclass(frozen=True)
class FixedPlacement:
    """An explicit sensed-bus set (each sensed bus exposes its |v| and
    injection, plus flows on its incident lines), with an optional
    per-call communication loss fraction."""

    buses: tuple
    loss: float = 0.0
    noise_pct: float = 1.0
    pseudo_pct: float = 10.0


_CODES = ("0", "P", "M")


@dataclass(frozen=True)
class DataDriven:
    """Category-driven availability.

    Codes per category: '0' unavailable, 'P' pseudo, 'M' measured.  Solar
    buses expose {Re s, Im s, |v|}; load buses expose only Re s.  Coverage
    fractions below 1 observe a random subset of each category.
    """

    solar: str = "M"
    large: str = "M"
    small: str = "M"
    coverage_solar: float = 1.0
    coverage_large: float = 1.0
    coverage_small: float = 1.0
    noise_pct: float = 1.0
    pseudo_pct: float = 10.0

    def __post_init__(self):
        for code in (self.solar, self.large, self.small):
            if code not in _CODES:
                raise ValueError(f"availability code must be one of {_CODES}")


@dataclass(frozen=True)
class AugmentedObservability:
    """A data-driven base plus added sensors: AMI injection data (pseudo
    class) and voltage-magnitude sensors (measurement class)."""

    base: DataDriven
    ami_buses: tuple = ()
    magnitude_buses: tuple = ()

    @property
    def noise_pct(self):
        return self.base.noise_pct

    @property
    def pseudo_pct(self):
        return self.base.pseudo_pct

    @property
    def sensor_count(self):
        return len(self.ami_buses) + len(self.magnitude_buses)


@dataclass(frozen=True)
class ObservedMatrix:
    """Mask plus noisy values; unobserved cells are zero-filled."""

    layout: MatrixLayout
    values: np.ndarray
    mask: np.ndarray                 # bool, same shape
    classes: dict                    # Quantity -> NoiseClass
    noise_pct: float = 1.0
    pseudo_pct: float = 10.0

    def __post_init__(self):
        if np.any(self.values[~self.mask] != 0.0):
            raise ValueError("values must be zero outside the mask")
        for q in self.classes:
            if (q.kind in _PHASOR_KINDS
                    and not self.layout.is_slack_quantity(q)):
                raise ValueError(f"illegal phasor observation {q}")

    def sigma(self, noise_class):
        if noise_class is NoiseClass.EXACT:
            return 0.0
        if noise_class is NoiseClass.MEASUREMENT:
            return self.noise_pct / 100.0
        return self.pseudo_pct / 100.0

    def observed(self):
        """(quantity, class, value) triples in canonical order."""
        out = []
        for q in sorted(self.classes, key=Quantity.sort_key):
            cell = self.layout.representative(q)
            out.append((q, self.classes[q], self.values[cell]))
        return out

    @property
    def n_masked_cells(self):
        return int(self.mask.sum())


def _sample(rng, items, fraction, key=None):
    items = sorted(items, key=key)
    k = int(round(fraction * len(items)))
    if k >= len(items):
        return list(items)
    if k <= 0:
        return []
    idx = rng.choice(len(items), size=k, replace=False)
    return [items[i] for i in sorted(idx)]


def _mark(plan, q, noise_class):
    held = plan.get(q)
    if held is None or _CLASS_RANK[noise_class] < _CLASS_RANK[held]:
        plan[q] = noise_class


def _mark_bus(plan, layout, bus, kinds, noise_class):
    for kind in kinds:
        q = Quantity(kind, bus)
        if q in layout.quantity_cells:
            _mark(plan, q, noise_class)


# which branch flows a sensed-bus subset exposes: "both" requires both
# endpoints instrumented, "either" treats one sensed terminal as enough
# (a line sensor at one end of the conductor reads the same series current)
CURRENT_RULE = "either"


def _current_observed(f, t, chosen):
    if CURRENT_RULE == "either":
        return f in chosen or t in chosen
    return f in chosen and t in chosen


def _placement_plan(plan, layout, chosen, rng):
    chosen = set(chosen)
    for b in chosen:
        _mark_bus(plan, layout, b,
                  (QuantityKind.ABS_V, QuantityKind.RE_S, QuantityKind.IM_S),
                  NoiseClass.MEASUREMENT)
    if layout.formulation is Formulation.BRANCH:
        for (f, t) in layout.row_keys:
            if layout.slack_bus in (f, t):
                continue  # already exact substation telemetry
            if _current_observed(f, t, chosen):
                for kind in _CURRENT_KINDS:
                    _mark(plan, Quantity(kind, (f, t)),
                          NoiseClass.MEASUREMENT)


_SOLAR_KINDS = (QuantityKind.RE_S, QuantityKind.IM_S, QuantityKind.ABS_V)
_LOAD_KINDS = (QuantityKind.RE_S,)


def _data_driven_plan(plan, layout, scn, rng):
    groups = (
        (BusCategory.SOLAR, scn.solar, scn.coverage_solar, _SOLAR_KINDS),
        (BusCategory.LARGE_LOAD, scn.large, scn.coverage_large, _LOAD_KINDS),
        (BusCategory.SMALL_LOAD, scn.small, scn.coverage_small, _LOAD_KINDS),
    )
    for category, code, coverage, kinds in groups:
        if code == "0":
            continue
        eligible = [b for b in layout.bus_ids
                    if layout.categories[b] is category]
        cls = (NoiseClass.MEASUREMENT if code == "M" else NoiseClass.PSEUDO)
        for b in _sample(rng, eligible, coverage):
            _mark_bus(plan, layout, b, kinds, cls)


def _slack_plan(layout):
    plan = {}
    for q in layout.quantities():
        if layout.is_slack_quantity(q):
            _mark(plan, q, NoiseClass.EXACT)
    return plan


def _realize(m, plan, noise_pct, pseudo_pct, rng):
    """Draw the noisy observed matrix for a completed placement plan.

    One noise draw per physical quantity, in canonical quantity order so
    the draw sequence is placement-independent; duplicate cells carry the
    same observed value.
    """
    layout = m.layout
    values = np.zeros(layout.shape)
    mask = np.zeros(layout.shape, dtype=bool)
    sigma = {NoiseClass.EXACT: 0.0,
             NoiseClass.MEASUREMENT: noise_pct / 100.0,
             NoiseClass.PSEUDO: pseudo_pct / 100.0}
    for q in sorted(plan, key=Quantity.sort_key):
        truth = m.values[layout.representative(q)]
        s = sigma[plan[q]]
        value = truth * (1.0 + s * rng.standard_normal()) if s else truth
        for cell in layout.quantity_cells[q]:
            values[cell] = value
            mask[cell] = True
    return ObservedMatrix(layout=layout, values=values, mask=mask,
                          classes=plan, noise_pct=noise_pct,
                          pseudo_pct=pseudo_pct)


def observe_quantities(m, quantities, rng, noise_pct=1.0, pseudo_pct=10.0,
                       pseudo=()):
    """Observe an explicit quantity list (plus the always-on substation
    telemetry); quantities also listed in `pseudo` get the pseudo class."""
    layout = m.layout
    plan = _slack_plan(layout)
    pseudo = set(pseudo)
    for q in quantities:
        if q not in layout.quantity_cells:
            raise KeyError(f"unknown quantity {q}")
        _mark(plan, q,
              NoiseClass.PSEUDO if q in pseudo else NoiseClass.MEASUREMENT)
    return _realize(m, plan, noise_pct, pseudo_pct, rng)


def remove_quantities(observed, quantities):
    """Drop quantities from a realized observation without redrawing the
    surviving noise (for paired data-loss comparisons).  Substation
    telemetry cannot be dropped."""
    classes = dict(observed.classes)
    values = observed.values.copy()
    mask = observed.mask.copy()
    for q in quantities:
        cls = classes.get(q)
        if cls is None or cls is NoiseClass.EXACT:
            continue
        del classes[q]
        for cell in observed.layout.quantity_cells[q]:
            values[cell] = 0.0
            mask[cell] = False
    return ObservedMatrix(layout=observed.layout, values=values, mask=mask,
                          classes=classes, noise_pct=observed.noise_pct,
                          pseudo_pct=observed.pseudo_pct)


def apply_observation_model(m, scenario, rng):
    """Draw one observed matrix for a scenario.

    One noise draw per physical quantity; duplicate cells carry the same
    observed value.  Slack telemetry is always present and exact.
    """
    layout = m.layout
    plan = _slack_plan(layout)

    if isinstance(scenario, RandomSampling):
        chosen = _sample(rng, potentially_known_quantities(layout),
                         scenario.fraction, key=Quantity.sort_key)
        for q in chosen:
            _mark(plan, q, NoiseClass.MEASUREMENT)
    elif isinstance(scenario, FixedPlacement):
        _placement_plan(plan, layout, scenario.buses, rng)
        if scenario.loss > 0:
            removable = sorted((q for q, c in plan.items()
                                if c is not NoiseClass.EXACT),
                               key=Quantity.sort_key)
            k = int(round(scenario.loss * len(removable)))
            if k > 0:
                idx = rng.choice(len(removable), size=k, replace=False)
                for i in idx:
                    del plan[removable[i]]
    elif isinstance(scenario, DataDriven):
        _data_driven_plan(plan, layout, scenario, rng)
    elif isinstance(scenario, AugmentedObservability):
        _data_driven_plan(plan, layout, scenario.base, rng)
        for b in scenario.ami_buses:
            _mark_bus(plan, layout, b,
                      (QuantityKind.RE_S, QuantityKind.IM_S),
                      NoiseClass.PSEUDO)
        for b in scenario.magnitude_buses:
            _mark_bus(plan, layout, b, (QuantityKind.ABS_V,),
                      NoiseClass.MEASUREMENT)
    else:
        raise TypeError(f"unknown scenario type {type(scenario).__name__}")

    return _realize(m, plan, scenario.noise_pct, scenario.pseudo_pct, rng)


def potentially_known_quantities(layout):
    return [q for q in layout.quantities() if layout.is_potentially_known(q)]


def observed_share(observed):
    """Fraction of potentially known quantities carrying a sensor reading
    (exact slack telemetry excluded from both sides)."""
    pk = set(potentially_known_quantities(observed.layout))
    got = {q for q, c in observed.classes.items()
           if q in pk and c is not NoiseClass.EXACT}
    return len(got) / len(pk)


# ---------------------------------------------------------------------------
# Serialization

def write_matrix_csv(values, fobj):
    writer = csv.writer(fobj)
    for row in np.asarray(values):
        writer.writerow([repr(float(x)) for x in row])


def write_mask_csv(observed, fobj):
    """Rows of (row, col, noise_class) for every masked cell."""
    writer = csv.writer(fobj)
    writer.writerow(["row", "col", "noise_class"])
    layout = observed.layout
    for (r, c) in sorted(zip(*np.nonzero(observed.mask))):
        q = layout.cell_quantity[(int(r), int(c))]
        writer.writerow([int(r), int(c), observed.classes[q].value])
