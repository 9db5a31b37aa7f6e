"""First-order voltage model for the non-slack buses.

Around an expansion point v_hat, complex voltages respond to the stacked
real/imaginary injection vector u = [Re s; Im s] as

    v    ~  A u + w
    |v|  ~  C u + |w|

where w is the zero-load voltage profile.  A comes from linearizing the
nodal equations (injections divided by the conjugate expansion voltages,
pushed through the factorized non-slack admittance block) and C is the
first-order magnitude sensitivity, real by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearModel:
    a: np.ndarray       # complex, (n-1) x 2(n-1)
    c: np.ndarray       # real, same shape
    w: np.ndarray       # zero-load complex voltages, (n-1,)
    v_hat: np.ndarray   # expansion point, (n-1,)


def zero_load_voltage(blocks, v1):
    """Non-slack voltages when every injection is zero.

    Solves yll w = -yl1 v1 with the cached factorization; for a shunt-free
    feeder this is exactly a flat profile at v1.
    """
    return blocks.solve(-blocks.yl1 * v1)


def injection_stack(s):
    """Stack a complex injection vector as [Re s; Im s]."""
    s = np.asarray(s, dtype=complex)
    return np.concatenate((s.real, s.imag))


def build_linear_model(blocks, v1, v_hat=None):
    """Build the sensitivity model around v_hat (default: zero-load point)."""
    w = zero_load_voltage(blocks, v1)
    if v_hat is None:
        v_hat = w
    v_hat = np.asarray(v_hat, dtype=complex)
    # columns of B solve yll B = diag(1/conj(v_hat))
    b = blocks.solve(np.diag(1.0 / np.conj(v_hat)))
    a = np.concatenate((b, -1j * b), axis=1)
    c = (np.conj(v_hat)[:, None] * a).real / np.abs(v_hat)[:, None]
    return LinearModel(a=a, c=c, w=w, v_hat=v_hat)


def predict_voltages(model, injections):
    """Predicted (complex voltages, magnitudes) for complex injections."""
    u = injection_stack(injections)
    v = model.a @ u + model.w
    vmag = model.c @ u + np.abs(model.w)
    return v, vmag
