"""Newton power flow in rectangular voltage coordinates.

The state is the stacked real and imaginary parts of the non-slack
voltages; the slack voltage is held fixed.  Iterations start from the
zero-load voltage profile, which for a radial feeder without shunts is a
flat profile at the slack voltage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linear import zero_load_voltage
from .network import build_admittance

NEWTON_TOL = 1e-10
MAX_ITERATIONS = 50
MAX_STEP_HALVINGS = 4


class PowerFlowError(RuntimeError):
    """Newton iteration failed; final mismatch is recorded."""

    def __init__(self, message, mismatch):
        super().__init__(f"{message} (mismatch {mismatch:.3e} p.u.)")
        self.mismatch = mismatch


@dataclass(frozen=True)
class PowerFlowSolution:
    """Solved operating point in internal (slack-first) bus order."""

    v: np.ndarray           # complex bus voltages
    s: np.ndarray           # realized net injections, slack included
    branch_i: np.ndarray    # sending-end branch currents
    iterations: int
    mismatch: float         # max |s_spec - s(v)| over non-slack buses

    @property
    def vmag(self):
        return np.abs(self.v)

    @property
    def angle_deg(self):
        return np.rad2deg(np.angle(self.v))


def _residual(y, v, s_spec):
    # complex power mismatch at non-slack buses
    return s_spec - v[1:] * np.conj(y[1:] @ v)


def _jacobian(y, v, current):
    """d[-residual]/d[e; f] for the non-slack block, as a real matrix."""
    yl = y[1:, 1:]
    vb = v[1:]
    de = np.conj(yl) * vb[:, None]
    de[np.diag_indices_from(de)] += np.conj(current)
    df = -1j * np.conj(yl) * vb[:, None]
    df[np.diag_indices_from(df)] += 1j * np.conj(current)
    return np.block([[de.real, df.real], [de.imag, df.imag]])


def solve_power_flow(net, injections=None, *, tol=NEWTON_TOL,
                     max_iter=MAX_ITERATIONS):
    """Solve the power flow for the given non-slack injections.

    injections: complex array of net power (length n_bus - 1, internal
    order), defaulting to the values carried by the network.  Raises
    PowerFlowError when Newton does not reach the tolerance.
    """
    blocks = build_admittance(net)
    y = blocks.full()
    v1 = net.slack_voltage
    if injections is None:
        injections = net.injections()[1:]
    s_spec = np.asarray(injections, dtype=complex)

    vl = zero_load_voltage(blocks, v1)
    v = np.concatenate(([v1], vl))
    r = _residual(y, v, s_spec)
    norm = np.linalg.norm(r, np.inf)
    for iteration in range(1, max_iter + 1):
        if norm < tol:
            break
        current = y[1:] @ v
        jac = _jacobian(y, v, current)
        rhs = np.concatenate((r.real, r.imag))
        step = np.linalg.solve(jac, rhs)
        dv = step[:len(s_spec)] + 1j * step[len(s_spec):]
        scale = 1.0
        for _ in range(MAX_STEP_HALVINGS + 1):
            v_new = v.copy()
            v_new[1:] += scale * dv
            r_new = _residual(y, v_new, s_spec)
            norm_new = np.linalg.norm(r_new, np.inf)
            if norm_new < norm or norm_new < tol:
                break
            scale /= 2.0
        else:
            raise PowerFlowError("power flow diverged", norm)
        v, r, norm = v_new, r_new, norm_new
    else:
        raise PowerFlowError("power flow did not converge", norm)

    s = v * np.conj(y @ v)
    return PowerFlowSolution(
        v=v, s=s, branch_i=branch_currents(net, v),
        iterations=iteration, mismatch=float(norm))


def branch_currents(net, v):
    """Sending-end current of every branch: (v_f - v_t) y plus the
    sending-end half of the line-charging shunt."""
    out = np.empty(net.n_branch, dtype=complex)
    for k, br in enumerate(net.branches):
        vf = v[net.index(br.from_bus)]
        vt = v[net.index(br.to_bus)]
        out[k] = (vf - vt) * br.y_series + vf * br.y_shunt / 2
    return out


def slack_injection(blocks, v):
    """Exact slack power from the full voltage vector: the slack current
    seen through the slack row of the admittance matrix."""
    i1 = blocks.y11 * v[0] + blocks.y1l @ v[1:]
    return v[0] * np.conj(i1)
