"""Matrix completion under a nuclear-norm prior with network side
information.

The estimate solves

    min  ||X||_*  +  sum_k w_k N(G_k vec(X) - b_k)
    s.t. ||X_obs - M_obs||_F <= delta,   duplicate cells equal,

where N is an L1 (default) or per-tag L2 norm over the penalized physics
residuals: branch flow consistency (ohm), the first-order voltage model
(vlin, vmag) and the exact substation injection (slack).

The solver is a consensus ADMM with three proximal blocks: singular-value
thresholding for the nuclear norm, soft-thresholding / block shrinkage
for the penalties, and an exact projection onto the intersection of the
data-fit ball with the duplication equalities (computed in the reduced
space of duplication classes with a scalar root-find, so the returned
matrix is feasible to machine precision).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dmatrix import Formulation, Quantity, QuantityKind
from .network import build_admittance

TAG_OHM = "ohm"
TAG_VLIN = "vlin"
TAG_VMAG = "vmag"
TAG_SLACK = "slack"


def nuclear_norm(m):
    return float(np.linalg.svd(m, compute_uv=False).sum())


def svt(m, tau):
    """Singular-value thresholding: U max(S - tau, 0) V^T."""
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (u * s) @ vt


@dataclass(frozen=True)
class SolverConfig:
    """Completion solver parameters; delta=None selects the
    noise-calibrated default radius.

    With standardize=True the completion runs in a geometry where each
    column is rescaled toward unit observed rms, so columns of very
    different physical magnitude (voltages near 1 p.u., injections orders
    smaller) are treated evenly by both the nuclear norm and the data-fit
    ball; delta is interpreted in that geometry, and columns tied by
    duplication share one scale.  The flag is off by default (plain
    low-rank matrices recover best unscaled) but the feeder estimation
    pipeline turns it on, which is essential there: without it the tiny
    injection columns contribute almost nothing to the nuclear norm and
    the completion can zero them out."""

    delta: float = None
    weights: dict = None            # tag -> weight, default 1.0 each
    residual_norm: str = "l1"       # "l1" or "l2" (per-tag block norm)
    rho: float = 1.0
    max_iter: int = 5000
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    standardize: bool = False

    def __post_init__(self):
        if self.residual_norm not in ("l1", "l2"):
            raise ValueError("residual_norm must be 'l1' or 'l2'")

    def weight(self, tag):
        if self.weights and tag in self.weights:
            return float(self.weights[tag])
        return 1.0


@dataclass(frozen=True)
class ConstraintSet:
    """Penalized residual maps plus duplication structure for one layout.

    g stacks one row per scalar residual (b the offsets); tag_slices maps
    each tag to its rows.  class_index assigns every flat cell to its
    duplication class.  Row-equilibrated copies and the normal-matrix
    factorization for the ADMM x-update are cached per residual norm and
    shared across solves; equilibration rescales the per-row penalty
    weights in lockstep, so the minimized objective is unchanged.
    """

    shape: tuple
    g: np.ndarray
    b: np.ndarray
    tag_slices: dict
    class_index: np.ndarray
    class_size: np.ndarray
    col_group: np.ndarray
    _cache: dict = field(repr=False, default_factory=dict)

    @property
    def n_cells(self):
        return self.shape[0] * self.shape[1]

    @property
    def n_rows(self):
        return self.g.shape[0]

    def scaled_system(self, norm, col_scale=None):
        """Row-equilibrated system (gs, gst, bs, row_scale, factor) for
        the ADMM x-update, optionally after column rescaling.

        Rows get unit norm for L1, or one uniform scale per tag for L2
        so its block prox stays exact.  The row scaling feeds back into
        the per-row penalty weights, leaving the objective unchanged.
        Results for the unstandardized geometry are cached.
        """
        if col_scale is None and norm in self._cache:
            return self._cache[norm]
        g = self.g if col_scale is None else self.g * col_scale[None, :]
        scale = np.linalg.norm(g, axis=1) if self.n_rows else np.zeros(0)
        scale[scale == 0] = 1.0
        if norm == "l2":
            for _, sl in self.tag_slices.items():
                scale[sl] = np.median(scale[sl])
        gs = g / scale[:, None]
        s = 2.0 * np.eye(self.n_cells)
        if self.n_rows:
            s += gs.T @ gs
        factor = scipy.linalg.cho_factor(s, overwrite_a=True)
        out = (gs, np.ascontiguousarray(gs.T), self.b / scale, scale,
               factor)
        if col_scale is None:
            self._cache[norm] = out
        return out


def _column_groups(shape, class_index):
    """Union columns linked by a duplication class so they can share a
    standardization scale (keeping scaled duplicates equal)."""
    n1, n2 = shape
    parent = list(range(n2))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    cols = np.tile(np.arange(n2), n1)
    order = np.argsort(class_index, kind="stable")
    sorted_classes = class_index[order]
    sorted_cols = cols[order]
    starts = np.flatnonzero(np.r_[True, np.diff(sorted_classes) > 0])
    for s, e in zip(starts, np.r_[starts[1:], len(order)]):
        first = find(sorted_cols[s])
        for c in sorted_cols[s + 1:e]:
            parent[find(c)] = first
    return np.array([find(c) for c in range(n2)])


def _finalize(shape, g, b, tag_slices, class_index):
    return ConstraintSet(
        shape=shape, g=g, b=b, tag_slices=tag_slices,
        class_index=class_index,
        class_size=np.bincount(class_index).astype(float),
        col_group=_column_groups(shape, class_index))


def free_constraints(shape):
    """No physics, no duplicates: plain nuclear-norm completion."""
    n = shape[0] * shape[1]
    return _finalize(shape, np.zeros((0, n)), np.zeros(0), {},
                     np.arange(n))


def assemble_constraints(net, model, layout):
    """Build the penalized physics rows for a layout of this network.

    Branch form carries ohm + vlin + vmag + slack tags; bus form has no
    flow cells, so ohm is absent.  Rows reference one representative cell
    per physical quantity; the duplication equalities tie the rest.
    """
    n1, n2 = layout.shape
    n = n1 * n2
    blocks = build_admittance(net)

    def rep(kind, at):
        r, c = layout.representative(Quantity(kind, at))
        return r * n2 + c

    rows, offsets, tags = [], [], []

    def add(coeffs, b0, tag):
        row = np.zeros(n)
        for idx, val in coeffs:
            row[idx] += val
        rows.append(row)
        offsets.append(b0)
        tags.append(tag)

    if layout.formulation is Formulation.BRANCH:
        for r, (f, t) in enumerate(layout.row_keys):
            br = net.branches[r]
            y = br.y_series
            ysh2 = br.y_shunt / 2
            c = lambda col: r * n2 + col
            add([(c(0), y.real + ysh2.real), (c(1), -y.imag - ysh2.imag),
                 (c(5), -y.real), (c(6), y.imag), (c(10), -1.0)],
                0.0, TAG_OHM)
            add([(c(0), y.imag + ysh2.imag), (c(1), y.real + ysh2.real),
                 (c(5), -y.imag), (c(6), -y.real), (c(11), -1.0)],
                0.0, TAG_OHM)

    nl = len(layout.bus_ids) - 1
    u_cells = ([rep(QuantityKind.RE_S, b) for b in layout.bus_ids[1:]]
               + [rep(QuantityKind.IM_S, b) for b in layout.bus_ids[1:]])
    for k, bid in enumerate(layout.bus_ids[1:]):
        add([(rep(QuantityKind.RE_V, bid), 1.0)]
            + [(u_cells[j], -model.a[k, j].real) for j in range(2 * nl)],
            model.w[k].real, TAG_VLIN)
        add([(rep(QuantityKind.IM_V, bid), 1.0)]
            + [(u_cells[j], -model.a[k, j].imag) for j in range(2 * nl)],
            model.w[k].imag, TAG_VLIN)
    for k, bid in enumerate(layout.bus_ids[1:]):
        add([(rep(QuantityKind.ABS_V, bid), 1.0)]
            + [(u_cells[j], -model.c[k, j]) for j in range(2 * nl)],
            abs(model.w[k]), TAG_VMAG)

    # substation power balance: s_1 = v_1 conj(y11 v_1 + y1l v_rest),
    # linear in the non-slack voltage cells since v_1 is known
    v1 = layout.slack_voltage
    c0 = v1 * np.conj(blocks.y11 * v1)
    re_terms = [(rep(QuantityKind.RE_S, layout.slack_bus), 1.0)]
    im_terms = [(rep(QuantityKind.IM_S, layout.slack_bus), 1.0)]
    for k, bid in enumerate(layout.bus_ids[1:]):
        coef = v1 * np.conj(blocks.y1l[k])
        if coef == 0:
            continue
        re_terms += [(rep(QuantityKind.RE_V, bid), -coef.real),
                     (rep(QuantityKind.IM_V, bid), -coef.imag)]
        im_terms += [(rep(QuantityKind.RE_V, bid), -coef.imag),
                     (rep(QuantityKind.IM_V, bid), coef.real)]
    add(re_terms, c0.real, TAG_SLACK)
    add(im_terms, c0.imag, TAG_SLACK)

    g = np.array(rows) if rows else np.zeros((0, n))
    b = np.array(offsets)
    tag_slices = {}
    for tag in (TAG_OHM, TAG_VLIN, TAG_VMAG, TAG_SLACK):
        where = [i for i, t in enumerate(tags) if t == tag]
        if where:
            tag_slices[tag] = slice(where[0], where[-1] + 1)

    class_index = np.empty(n, dtype=int)
    for cid, cells in enumerate(layout.classes()):
        for (r, c) in cells:
            class_index[r * n2 + c] = cid
    return _finalize((n1, n2), g, b, tag_slices, class_index)


@dataclass(frozen=True)
class PlainObservation:
    """Raw (values, mask) pair for completing unstructured matrices.

    sigma_pct optionally gives a per-cell relative noise level in percent
    (for mixed sensor classes); when omitted every observed cell is
    assumed to carry noise_pct.
    """

    values: np.ndarray
    mask: np.ndarray
    noise_pct: float = 0.0
    pseudo_pct: float = 0.0
    sigma_pct: np.ndarray = None


def observation_from_matrix(obs):
    """Adapt a masked data matrix with per-quantity noise classes to the
    solver's observation interface (per-cell sigma array included)."""
    sigma_pct = np.zeros(obs.values.shape)
    for q, cls in obs.classes.items():
        s = 100.0 * obs.sigma(cls)
        for cell in obs.layout.quantity_cells[q]:
            sigma_pct[cell] = s
    return PlainObservation(values=obs.values, mask=obs.mask,
                            noise_pct=obs.noise_pct,
                            pseudo_pct=obs.pseudo_pct,
                            sigma_pct=sigma_pct)


def _radius(masked_values, noise_pct):
    if masked_values.size == 0:
        return 0.0
    sigma = noise_pct / 100.0
    return 1.05 * sigma * np.sqrt(masked_values.size) \
        * np.sqrt(np.mean(masked_values ** 2))


def _radius_cells(masked_values, masked_sigma_pct):
    """Per-cell generalization of _radius; identical to it when every
    cell carries the same sigma."""
    if masked_values.size == 0:
        return 0.0
    return 1.05 * np.sqrt(
        np.sum((masked_sigma_pct / 100.0 * masked_values) ** 2))


def default_delta(observed):
    """Noise-calibrated data-fit radius: 1.05 sigma sqrt(|obs|) rms(M),
    stated in the raw (unstandardized) geometry."""
    masked = observed.values[observed.mask]
    if getattr(observed, "sigma_pct", None) is not None:
        return _radius_cells(masked, observed.sigma_pct[observed.mask])
    return _radius(masked, observed.noise_pct)


# How strongly observed columns are rescaled toward unit rms before the
# low-rank prior is applied.  1 would equalize every column group exactly;
# the damped value keeps part of the natural magnitude hierarchy, which
# validates better on feeder data (tiny power columns carry proportionally
# more noise than the near-unity voltage columns).
STANDARDIZE_EXPONENT = 0.7


def _observed_column_scales(values, mask, col_group):
    """Per-column rms of the observed cells, shared across columns that
    a duplication class ties together; unobserved columns keep scale 1."""
    d = np.ones(values.shape[1])
    for gid in np.unique(col_group):
        cols = np.flatnonzero(col_group == gid)
        vals = values[:, cols][mask[:, cols]]
        if vals.size:
            r = np.sqrt(np.mean(vals ** 2))
            if r > 1e-9:
                d[cols] = r
    return d ** STANDARDIZE_EXPONENT


@dataclass(frozen=True)
class CompletedMatrix:
    values: np.ndarray
    converged: bool
    diagnostics: dict


def residuals(values, con):
    """Stacked penalized residuals G vec(X) - b."""
    return con.g @ np.ravel(values) - con.b


def penalty_value(values, con, cfg):
    """sum_k w_k N(r_k) for the configured norm."""
    r = residuals(values, con)
    total = 0.0
    for tag, sl in con.tag_slices.items():
        if cfg.residual_norm == "l1":
            total += cfg.weight(tag) * np.abs(r[sl]).sum()
        else:
            total += cfg.weight(tag) * np.linalg.norm(r[sl])
    return total

def objective(values, con, cfg):
    """Nuclear norm plus residual penalties at a candidate matrix."""
    return nuclear_norm(values) + penalty_value(values, con, cfg)


def objective_with_tolerances(values, tolerances, con, cfg):
    """Objective in the explicit-tolerance form: the penalties act on a
    nonnegative tolerance vector bounding each |residual|."""
    r = residuals(values, con)
    t = np.asarray(tolerances)
    if np.any(t < np.abs(r) - 1e-9):
        raise ValueError("tolerances must bound the residual magnitudes")
    total = nuclear_norm(values)
    for tag, sl in con.tag_slices.items():
        if cfg.residual_norm == "l1":
            total += cfg.weight(tag) * t[sl].sum()
        else:
            total += cfg.weight(tag) * np.linalg.norm(t[sl])
    return total


class _BallProjector:
    """Exact projection onto {class-constant} intersected with the
    data-fit ball, parameterized by duplication-class values."""

    def __init__(self, con, m_flat, mask_flat, delta):
        ci, csize = con.class_index, con.class_size
        nclass = len(csize)
        self.ci, self.csize = ci, csize
        self.m_cnt = np.bincount(ci[mask_flat], minlength=nclass).astype(float)
        msum = np.bincount(ci[mask_flat], weights=m_flat[mask_flat],
                           minlength=nclass)
        self.mbar = np.divide(msum, self.m_cnt,
                              out=np.zeros(nclass), where=self.m_cnt > 0)
        # conflicting duplicate observations leave an irreducible misfit
        spread = float(((m_flat - self.mbar[ci])[mask_flat] ** 2).sum())
        self.conflict = spread > 1e-20
        self.budget = delta ** 2 - spread
        self.infeasible = self.budget < 0
        if self.infeasible:
            self.budget = 0.0
        self.masked = self.m_cnt > 0

    def __call__(self, y):
        means = np.bincount(self.ci, weights=y,
                            minlength=len(self.csize)) / self.csize
        d = means - self.mbar
        g0 = float((self.m_cnt * d * d)[self.masked].sum())
        if g0 <= self.budget:
            return means[self.ci]
        if self.budget == 0.0:
            z = np.where(self.masked, self.mbar, means)
            return z[self.ci]
        # root of sum m a^2 d^2 / (a + nu m)^2 = budget; g is convex and
        # decreasing in nu, so Newton from 0 converges monotonically
        a, m = self.csize, self.m_cnt
        num = (m * a * a * d * d)[self.masked]
        am, mm = a[self.masked], m[self.masked]
        nu = 0.0
        for _ in range(200):
            den = am + nu * mm
            gval = float((num / den ** 2).sum())
            if gval <= self.budget * (1 + 1e-12):
                break
            gprime = -2.0 * float((num * mm / den ** 3).sum())
            nu -= (gval - self.budget) / gprime
        z = (a * means + nu * m * self.mbar) / (a + nu * m)
        return z[self.ci]


_RELAXATION = 1.7


def solve_mc(observed, con, cfg=None):
    """Run the ADMM completion; never raises on non-convergence, the
    returned matrix carries a warning flag instead.

    The returned values are the feasible-block iterate, so the data-fit
    ball and the duplication equalities hold exactly.
    """
    if cfg is None:
        cfg = SolverConfig()
    n1, n2 = con.shape
    mask_flat = np.ravel(observed.mask).astype(bool)
    if cfg.standardize:
        dcol = _observed_column_scales(np.asarray(observed.values, float),
                                       np.asarray(observed.mask, bool),
                                       con.col_group)
    else:
        dcol = np.ones(n2)
    dcell = np.tile(dcol, n1)
    m_flat = np.ravel(observed.values).astype(float) / dcell
    if cfg.delta is not None:
        delta = cfg.delta
    elif getattr(observed, "sigma_pct", None) is not None:
        delta = _radius_cells(m_flat[mask_flat],
                              np.ravel(observed.sigma_pct)[mask_flat])
    else:
        delta = _radius(m_flat[mask_flat], observed.noise_pct)
    project = _BallProjector(con, m_flat, mask_flat, delta)

    rho = cfg.rho
    alpha = _RELAXATION
    g, gt, b, scale, factor = con.scaled_system(
        cfg.residual_norm, dcell if cfg.standardize else None)
    has_rows = g.shape[0] > 0
    if has_rows:
        wrow = np.empty(con.n_rows)
        for tag, sl in con.tag_slices.items():
            wrow[sl] = cfg.weight(tag)
        wrow *= scale  # equilibration-compensated: same objective as raw

    def penalty_prox(d):
        if cfg.residual_norm == "l1":
            return np.sign(d) * np.maximum(np.abs(d) - wrow / rho, 0.0)
        out = np.empty_like(d)
        for tag, sl in con.tag_slices.items():
            weight = wrow[sl][0]
            nrm = np.linalg.norm(d[sl])
            shrink = max(1.0 - weight / (rho * max(nrm, 1e-300)), 0.0)
            out[sl] = shrink * d[sl]
        return out

    x = m_flat.copy()
    y1 = x.copy()
    y2 = g @ x
    y3 = project(x)
    u1 = np.zeros_like(x)
    u2 = np.zeros_like(y2)
    u3 = np.zeros_like(x)
    hist_primal, hist_dual = [], []
    n_tot = 2 * x.size + y2.size
    converged = False

    for iteration in range(1, cfg.max_iter + 1):
        rhs = (y1 - u1) + (y3 - u3)
        if has_rows:
            rhs += gt @ (y2 - u2)
        x = scipy.linalg.cho_solve(factor, rhs)
        gx = g @ x if has_rows else y2

        xr1 = alpha * x + (1.0 - alpha) * y1
        xr3 = alpha * x + (1.0 - alpha) * y3
        y1_new = svt((xr1 + u1).reshape(n1, n2), 1.0 / rho).ravel()
        if has_rows:
            xr2 = alpha * gx + (1.0 - alpha) * y2
            y2_new = b + penalty_prox(xr2 + u2 - b)
        else:
            y2_new = y2
        y3_new = project(xr3 + u3)

        dual_vec = (y1 - y1_new) + (y3 - y3_new)
        if has_rows:
            dual_vec += gt @ (y2 - y2_new)
        s_norm = rho * np.linalg.norm(dual_vec)
        y1, y2, y3 = y1_new, y2_new, y3_new

        u1 += xr1 - y1
        u3 += xr3 - y3
        r_sq = np.sum((x - y1) ** 2) + np.sum((x - y3) ** 2)
        if has_rows:
            u2 += xr2 - y2
            r_sq += np.sum((gx - y2) ** 2)
        r_norm = np.sqrt(r_sq)
        hist_primal.append(r_norm)
        hist_dual.append(s_norm)

        y_norm = np.sqrt(np.sum(y1 ** 2) + np.sum(y2 ** 2) + np.sum(y3 ** 2))
        kx_norm = np.sqrt(2 * np.sum(x ** 2) + np.sum(gx ** 2))
        eps_pri = (np.sqrt(n_tot) * 1e-12
                   + cfg.tol_primal * max(kx_norm, y_norm))
        du = u1 + u3 + (gt @ u2 if has_rows else 0.0)
        eps_dual = (np.sqrt(x.size) * 1e-12
                    + cfg.tol_dual * rho * np.linalg.norm(du))
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break

    values = (y3 * dcell).reshape(n1, n2)
    r = residuals(values, con)
    tag_norms = {}
    for tag, sl in con.tag_slices.items():
        tag_norms[tag] = (float(np.abs(r[sl]).sum())
                          if cfg.residual_norm == "l1"
                          else float(np.linalg.norm(r[sl])))
    fit = float(np.linalg.norm((y3 - m_flat)[mask_flat]))
    fit_raw = float(np.linalg.norm(
        ((y3 - m_flat) * dcell)[mask_flat]))
    if project.conflict and delta == 0.0:
        converged = False
    diagnostics = {
        "iterations": iteration,
        "primal_residual": float(r_norm),
        "dual_residual": float(s_norm),
        "primal_history": np.array(hist_primal),
        "dual_history": np.array(hist_dual),
        "objective": objective(values, con, cfg),
        "objective_scaled": (nuclear_norm(y3.reshape(n1, n2))
                             + penalty_value(values, con, cfg)),
        "nuclear_norm": nuclear_norm(values),
        "penalty_norms": tag_norms,
        "data_fit": fit,
        "data_fit_raw": fit_raw,
        "delta": float(delta),
        "column_scales": dcol,
        "duplicate_conflict": project.conflict,
        "infeasible": project.infeasible,
    }
    return CompletedMatrix(values=values, converged=converged,
                           diagnostics=diagnostics)


@dataclass(frozen=True)
class VoltageEstimate:
    """Per-bus voltage estimate; vmag is reported separately because the
    completion carries magnitude cells independent of the phasor cells."""

    bus_ids: tuple
    v: np.ndarray
    vmag: np.ndarray

    @property
    def angle_deg(self):
        return np.rad2deg(np.angle(self.v))

    @classmethod
    def from_phasors(cls, bus_ids, v):
        return cls(bus_ids=tuple(bus_ids), v=np.asarray(v, dtype=complex),
                   vmag=np.abs(v))


def extract_state(completed, layout):
    """Average the voltage cells per bus; the slack is passed through from
    the known substation voltage."""
    vals = completed.values
    ids = layout.bus_ids
    v = np.empty(len(ids), dtype=complex)
    vmag = np.empty(len(ids))
    v[0] = layout.slack_voltage
    vmag[0] = abs(layout.slack_voltage)

    def cell_mean(kind, at):
        cells = layout.quantity_cells[Quantity(kind, at)]
        return float(np.mean([vals[c] for c in cells]))

    for k, bid in enumerate(ids[1:], start=1):
        re = cell_mean(QuantityKind.RE_V, bid)
        im = cell_mean(QuantityKind.IM_V, bid)
        v[k] = re + 1j * im
        vmag[k] = cell_mean(QuantityKind.ABS_V, bid)
    return VoltageEstimate(bus_ids=ids, v=v, vmag=vmag)
