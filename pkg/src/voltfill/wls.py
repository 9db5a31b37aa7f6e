"""Weighted least-squares state estimation over bus voltage phasors.

The estimator works in rectangular coordinates on the non-slack voltages
(the slack phasor is known), with the classical measurement kinds:
voltage magnitude, bus injection P/Q, and branch current components.
It is the textbook baseline the completion method is compared against,
and deliberately requires full numerical observability.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linear import zero_load_voltage
from .mc import VoltageEstimate
from .network import build_admittance

RANK_TOL = 1e-8
STEP_TOL = 1e-8
MAX_ITERATIONS = 40
SIGMA_FLOOR = 1e-6
SIGMA_EXACT = 1e-5


class MeasurementKind(Enum):
    V_MAG = "v_mag"
    P_INJ = "p_inj"
    Q_INJ = "q_inj"
    I_RE = "i_re"
    I_IM = "i_im"


_BUS_KINDS = (MeasurementKind.V_MAG, MeasurementKind.P_INJ,
              MeasurementKind.Q_INJ)


@dataclass(frozen=True)
class Measurement:
    kind: MeasurementKind
    at: object          # bus id, or (from, to) for current kinds
    value: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


class UnobservableError(RuntimeError):
    """Raised when the measurement Jacobian is column-rank deficient."""

    def __init__(self, rank, needed):
        super().__init__(
            f"measurement set is unobservable: Jacobian rank {rank} "
            f"< {needed} states")
        self.rank = rank
        self.needed = needed


class EstimationError(RuntimeError):
    """Gauss-Newton failed to reach the step tolerance."""


@dataclass(frozen=True)
class MeasurementSet:
    measurements: tuple

    def __len__(self):
        return len(self.measurements)

    def write_csv(self, fobj):
        writer = csv.writer(fobj)
        writer.writerow(["kind", "at", "value", "sigma"])
        for m in self.measurements:
            at = (f"{m.at[0]}-{m.at[1]}" if isinstance(m.at, tuple)
                  else str(m.at))
            writer.writerow([m.kind.value, at, repr(m.value), repr(m.sigma)])

    @classmethod
    def read_csv(cls, fobj):
        out = []
        for row in csv.DictReader(fobj):
            at = row["at"]
            at = (tuple(int(p) for p in at.split("-"))
                  if "-" in at else int(at))
            out.append(Measurement(kind=MeasurementKind(row["kind"]), at=at,
                                   value=float(row["value"]),
                                   sigma=float(row["sigma"])))
        return cls(measurements=tuple(out))


class _Model:
    """Measurement function h(v) and its rectangular Jacobian."""

    def __init__(self, net, measurements):
        self.net = net
        self.blocks = build_admittance(net)
        self.y_full = self.blocks.full()
        self.idx = {b.id: k for k, b in enumerate(net.buses)}
        self.branch = {(br.from_bus, br.to_bus): br for br in net.branches}
        self.measurements = measurements
        self.n = net.n_bus

    def state_size(self):
        return 2 * (self.n - 1)

    def evaluate(self, v):
        """h(v) and dh/d[Re v_nonslack; Im v_nonslack]."""
        n = self.n
        i_inj = self.y_full @ v
        h = np.empty(len(self.measurements))
        jac = np.zeros((len(self.measurements), 2 * (n - 1)))

        def cols(k):          # state columns of bus index k (nonslack)
            return k - 1, n - 1 + (k - 1)

        for row, m in enumerate(self.measurements):
            if m.kind in _BUS_KINDS:
                k = self.idx[m.at]
                if m.kind is MeasurementKind.V_MAG:
                    h[row] = abs(v[k])
                    if k > 0:
                        cr, ci = cols(k)
                        jac[row, cr] = v[k].real / abs(v[k])
                        jac[row, ci] = v[k].imag / abs(v[k])
                else:
                    s = v[k] * np.conj(i_inj[k])
                    h[row] = s.real if m.kind is MeasurementKind.P_INJ \
                        else s.imag
                    # ds/dv_j = v_k conj(Y_kj) (+ conj(i_inj_k) if j = k)
                    for j in range(1, n):
                        y = self.y_full[k, j]
                        if y == 0 and j != k:
                            continue
                        d_re = v[k] * np.conj(y)
                        d_im = v[k] * np.conj(1j * y)
                        if j == k:
                            d_re += np.conj(i_inj[k])
                            d_im += 1j * np.conj(i_inj[k])
                        cr, ci = cols(j)
                        if m.kind is MeasurementKind.P_INJ:
                            jac[row, cr] = d_re.real
                            jac[row, ci] = d_im.real
                        else:
                            jac[row, cr] = d_re.imag
                            jac[row, ci] = d_im.imag
            else:
                f, t = m.at
                br = self.branch[(f, t)]
                kf, kt = self.idx[f], self.idx[t]
                yf = br.y_series + br.y_shunt / 2
                cur = v[kf] * yf - v[kt] * br.y_series
                h[row] = cur.real if m.kind is MeasurementKind.I_RE \
                    else cur.imag
                for k, coef in ((kf, yf), (kt, -br.y_series)):
                    if k == 0:
                        continue
                    cr, ci = cols(k)
                    if m.kind is MeasurementKind.I_RE:
                        jac[row, cr] = coef.real
                        jac[row, ci] = -coef.imag
                    else:
                        jac[row, cr] = coef.imag
                        jac[row, ci] = coef.real
        return h, jac

    def flat_voltage(self):
        v = np.empty(self.n, dtype=complex)
        v[0] = self.net.slack_voltage
        v[1:] = zero_load_voltage(self.blocks, self.net.slack_voltage)
        return v


def check_observability(net, measurements):
    """Numerical column rank of the Jacobian at the no-load voltage vs
    the 2(n-1) unknown state dimensions."""
    model = _Model(net, tuple(measurements))
    _, jac = model.evaluate(model.flat_voltage())
    if jac.shape[0] == 0:
        return False, 0
    s = np.linalg.svd(jac, compute_uv=False)
    rank = int(np.sum(s > RANK_TOL * s[0]))
    return rank == model.state_size(), rank


def wls_estimate(net, measurement_set, max_iter=MAX_ITERATIONS):
    """Gauss-Newton weighted least squares from the no-load start.

    Raises UnobservableError when rank-deficient and EstimationError when
    the iteration fails to settle.
    """
    measurements = tuple(measurement_set.measurements)
    model = _Model(net, measurements)
    observable, rank = check_observability(net, measurements)
    if not observable:
        raise UnobservableError(rank, model.state_size())

    z = np.array([m.value for m in measurements])
    sig = np.array([m.sigma for m in measurements])
    sqrt_w = 1.0 / sig
    v = model.flat_voltage()
    n = model.n
    for _ in range(max_iter):
        h, jac = model.evaluate(v)
        rhs = (z - h) * sqrt_w
        step, *_ = np.linalg.lstsq(jac * sqrt_w[:, None], rhs, rcond=None)
        v[1:] += step[:n - 1] + 1j * step[n - 1:]
        if np.linalg.norm(step) < STEP_TOL:
            return VoltageEstimate.from_phasors([b.id for b in net.buses], v)
    raise EstimationError(
        f"weighted least squares did not settle in {max_iter} iterations")


def measurements_from_observation(observed, net):
    """Translate an observed data matrix into classical measurements.

    Every observed physical quantity becomes one measurement: magnitude,
    injection P/Q, or branch current component.  Exact substation
    telemetry enters with a tight sigma; noisy classes use
    sigma = max(sigma_rel |z|, floor) of their class.
    """
    from .dmatrix import NoiseClass, QuantityKind

    layout = observed.layout
    kind_map = {
        QuantityKind.ABS_V: MeasurementKind.V_MAG,
        QuantityKind.RE_S: MeasurementKind.P_INJ,
        QuantityKind.IM_S: MeasurementKind.Q_INJ,
        QuantityKind.RE_I: MeasurementKind.I_RE,
        QuantityKind.IM_I: MeasurementKind.I_IM,
    }
    sigma_rel = {NoiseClass.MEASUREMENT: observed.noise_pct / 100.0,
                 NoiseClass.PSEUDO: observed.pseudo_pct / 100.0}
    out = []
    for q, cls in sorted(observed.classes.items(),
                         key=lambda item: item[0].sort_key()):
        if q.kind not in kind_map:
            continue
        value = float(observed.values[layout.representative(q)])
        if cls is NoiseClass.EXACT:
            sigma = SIGMA_EXACT
        else:
            sigma = max(sigma_rel[cls] * abs(value), SIGMA_FLOOR)
        out.append(Measurement(kind=kind_map[q.kind], at=q.at,
                               value=value, sigma=sigma))
    return MeasurementSet(measurements=tuple(out))
