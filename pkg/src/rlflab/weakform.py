"""Distributional-form residuals, a finite-volume oracle, and stability statistics.

A :class:`MeasureCurve` is a time-sampled curve of particle measures solving
(or purporting to solve) the continuity equation  d/dt mu_t + div(b mu_t) = 0.
:func:`weak_residual` measures how well a curve satisfies the equation against
a smooth space test function and a smooth time window.
:func:`solve_functional_continuity` evolves a grid density with a positivity-
preserving first-order upwind scheme and serves as the independent oracle for
the same transport problem.

The five statistics at the bottom quantify, for weighted families of curves,
uniform regularity, decay away from the singular set, space and time
tightness, and the limit continuity equation; :func:`stability_gap` measures
the distance between a family and reference flow curves member by member.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy import optimize

from .fields import PhaseSpaceField, SingularSet, decay_integrand, eval_field
from .measures import (
    GridDensity,
    GridSpec,
    ParticleMeasure,
    TestFunctionDictionary,
    _bump,
    _bump_deriv,
    bump_tables,
    weak_distance,
)

__all__ = [
    "MeasureCurve",
    "CurveFamily",
    "TimeBump",
    "GridCurve",
    "weak_residual",
    "solve_functional_continuity",
    "uniform_regularity_stat",
    "decay_stat",
    "space_tightness_stat",
    "time_tightness_stat",
    "limit_continuity_stat",
    "stability_gap",
    "StabilityReport",
    "box_distance_to_set",
    "default_time_bumps",
    "l1_grid_distance",
]

MASS_CONSTANCY_TOL = 1e-12
DEFAULT_SINGULAR_MARGIN = 0.05


# ---------------------------------------------------------------------------
# Curves of measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureCurve:
    """Curve t -> mu_t on a shared time grid; transport keeps mass constant.

    ``mass_deficit`` records mass dropped at construction (e.g. trajectories
    excised near a singular set) and is excluded from the constancy check.
    """

    times: np.ndarray
    slices: tuple
    provenance: str = ""
    mass_deficit: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.shape[0] != len(self.slices):
            raise ValueError("times and slices must align")
        if t.shape[0] >= 2 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        dims = {m.dim for m in self.slices}
        if len(dims) != 1:
            raise ValueError("slices have inconsistent dims")
        masses = np.array([m.total_mass for m in self.slices])
        spread = float(np.ptp(masses))
        if spread > MASS_CONSTANCY_TOL * max(1.0, masses.max()):
            raise ValueError(
                f"slice masses vary by {spread:.3e}; transport conserves mass"
            )
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "slices", tuple(self.slices))

    @property
    def dim(self) -> int:
        return self.slices[0].dim

    @property
    def num_times(self) -> int:
        return self.times.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def slice_at(self, t: float, atol: float = 1e-9) -> ParticleMeasure:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > atol:
            raise ValueError(f"no slice at t={t}; nearest grid time {self.times[idx]}")
        return self.slices[idx]

    def pairings(self, phi) -> np.ndarray:
        """t |-> integral of phi d mu_t on the curve grid."""
        return np.array([float(phi(m.points) @ m.weights) for m in self.slices])

    def pairing_table(self, functions) -> np.ndarray:
        """Pairings of many functions with every slice, shape (len(fns), T).

        Memoized per functions container (identity), so the statistics below
        share one evaluation pass per curve.
        """
        memo = getattr(self, "_pairing_memo", None)
        if memo is None:
            memo = {}
            object.__setattr__(self, "_pairing_memo", memo)
        hit = memo.get(id(functions))
        if hit is not None and hit[0] is functions:
            return hit[1]
        tab = np.stack([bump_tables(functions, m.points, m.weights)[0]
                        for m in self.slices], axis=1)
        memo[id(functions)] = (functions, tab)
        return tab


@dataclass(frozen=True)
class CurveFamily:
    """P-weighted family of measure curves sharing one time grid."""

    curves: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != len(self.curves):
            raise ValueError("one weight per curve required")
        if np.any(w < 0):
            raise ValueError("family weights must be nonnegative")
        t0 = self.curves[0].times
        for c in self.curves[1:]:
            if c.times.shape != t0.shape or not np.allclose(c.times, t0, atol=1e-12):
                raise ValueError("family curves must share the time grid")
        object.__setattr__(self, "curves", tuple(self.curves))
        object.__setattr__(self, "weights", w)

    @property
    def times(self) -> np.ndarray:
        return self.curves[0].times

    @property
    def num_members(self) -> int:
        return len(self.curves)

    def normalized_weights(self) -> np.ndarray:
        total = self.weights.sum()
        if total <= 0:
            raise ValueError("family has zero total weight")
        return self.weights / total


class TimeBump:
    """Smooth window supported in (t0, t1) with closed-form derivative."""

    def __init__(self, t0: float, t1: float):
        if not t0 < t1:
            raise ValueError("need t0 < t1")
        self.t0 = float(t0)
        self.t1 = float(t1)

    def _u(self, t):
        return (2.0 * np.asarray(t, float) - (self.t0 + self.t1)) / (self.t1 - self.t0)

    def value(self, t) -> np.ndarray:
        return _bump(self._u(t))

    def derivative(self, t) -> np.ndarray:
        return _bump_deriv(self._u(t)) * (2.0 / (self.t1 - self.t0))


def default_time_bumps(T: float) -> tuple:
    """Two windows at different widths inside (0, T)."""
    return (TimeBump(0.05 * T, 0.95 * T), TimeBump(0.2 * T, 0.7 * T))


# ---------------------------------------------------------------------------
# Geometry guard: test-function supports must keep clear of S
# ---------------------------------------------------------------------------

def box_distance_to_set(box: np.ndarray, s: SingularSet) -> float:
    """Euclidean distance from an axis-aligned box to a singular set."""
    box = np.atleast_2d(np.asarray(box, dtype=float))
    lo, hi = box[:, 0], box[:, 1]
    if s.is_empty:
        return np.inf
    if s.kind == "points":
        gap = np.maximum(lo[None, :] - s.points, 0.0) \
            + np.maximum(s.points - hi[None, :], 0.0)
        return float(np.linalg.norm(gap, axis=1).min())

    def objective(t):
        x = s.origin + s.basis @ t
        gap = np.maximum(lo - x, 0.0) + np.maximum(x - hi, 0.0)
        return float(gap @ gap)

    t0 = s.basis.T @ (0.5 * (lo + hi) - s.origin)
    res = optimize.minimize(objective, t0, method="L-BFGS-B")
    return float(np.sqrt(max(res.fun, 0.0)))


def _check_support_margin(phi, field: PhaseSpaceField, margin: float) -> None:
    s = field.singular_set
    if s.is_empty:
        return
    support = np.atleast_2d(phi.support_box)
    x_box = support[: field.n]
    d = box_distance_to_set(x_box, s)
    if d < margin:
        raise ValueError(
            f"test-function support is {d:.3g} from the singular set; "
            f"required margin {margin:.3g}"
        )


def admissible_functions(phis, field: PhaseSpaceField,
                         margin: float = DEFAULT_SINGULAR_MARGIN) -> list:
    """Subset of test functions whose position support clears the margin.

    Pairings involving <b, grad phi> need the field bounded on supp(phi), so
    functions hugging the singular set are excluded.  The set is negligible,
    hence the surviving family still separates the measures of interest.
    """
    s = field.singular_set
    if s.is_empty:
        return list(phis)
    out = []
    for phi in phis:
        support = np.atleast_2d(phi.support_box)
        if box_distance_to_set(support[: field.n], s) >= margin:
            out.append(phi)
    return out


# ---------------------------------------------------------------------------
# Weak-form residual
# ---------------------------------------------------------------------------

def weak_residual(curve: MeasureCurve, b: PhaseSpaceField, phi,
                  time_fn: TimeBump,
                  margin: float = DEFAULT_SINGULAR_MARGIN) -> float:
    """Continuity-equation defect of a curve against (phi, time window).

    Returns  | int_0^T [ phi'(t) <mu_t, phi> + phi(t) <mu_t, <b, grad phi>> ] dt |
    with both time integrals by the trapezoid rule on the curve grid.  The
    space test function must be supported at least ``margin`` away from the
    singular set (in position).
    """
    if curve.dim != b.dim:
        raise ValueError(f"curve dim {curve.dim} != field dim {b.dim}")
    _check_support_margin(phi, b, margin)
    t = curve.times
    m = np.empty(t.shape[0])
    g = np.empty(t.shape[0])
    for j, sl in enumerate(curve.slices):
        vals = phi(sl.points)
        m[j] = float(vals @ sl.weights)
        grad = phi.gradient(sl.points)
        bz = eval_field(b, sl.points)
        g[j] = float(np.einsum("nd,nd->n", bz, grad) @ sl.weights)
    integrand = time_fn.derivative(t) * m + time_fn.value(t) * g
    return float(abs(np.trapezoid(integrand, t)))


# ---------------------------------------------------------------------------
# Finite-volume oracle for the functional continuity equation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridCurve:
    """Grid-density curve from the finite-volume solver, with outflow ledger."""

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray          # (M, *cells)
    outflow: np.ndarray         # cumulative boundary outflow mass at each time

    def density_at(self, j: int) -> GridDensity:
        return GridDensity(self.grid, self.values[j])

    def slice_near(self, t: float) -> GridDensity:
        j = int(np.argmin(np.abs(self.times - t)))
        return self.density_at(j)


def l1_grid_distance(a: GridDensity, b: GridDensity) -> float:
    if a.grid.cells != b.grid.cells or not np.allclose(a.grid.box, b.grid.box):
        raise ValueError("grids must match")
    return float(np.abs(a.values - b.values).sum() * a.grid.cell_volume)


def _face_velocities(grid: GridSpec, b: PhaseSpaceField) -> list:
    """Normal velocity of b at the face centers of each axis."""
    d = grid.dim
    vels = []
    for a in range(d):
        axes = [grid.edges(a) if ax == a else grid.centers(ax) for ax in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        v = eval_field(b, pts)[:, a].reshape(mesh[0].shape)
        vels.append(v)
    return vels


def solve_functional_continuity(w0: GridDensity, b: PhaseSpaceField, T: float,
                                cfl: float = 0.45, dt: float = None,
                                n_store: int = 33,
                                margin: float = DEFAULT_SINGULAR_MARGIN) -> GridCurve:
    """Evolve a nonnegative grid density with donor-cell upwind fluxes.

    Outflow boundaries: mass may leave through the box faces and is
    accumulated in the outflow ledger, so stored mass plus cumulative outflow
    equals the initial mass to rounding.  The scheme is first order and
    positivity preserving under the CFL restriction; a caller-supplied ``dt``
    violating it raises with the largest admissible value.
    """
    grid = w0.grid
    if b.dim != grid.dim:
        raise ValueError(f"field dim {b.dim} != grid dim {grid.dim}")
    if not b.singular_set.is_empty:
        d = box_distance_to_set(grid.box[: b.n], b.singular_set)
        if d < margin:
            raise ValueError(
                f"grid box is {d:.3g} from the singular set; required margin {margin:.3g}"
            )
    vels = _face_velocities(grid, b)
    spacing = grid.spacing
    rate = sum(np.abs(v).max() / spacing[a] for a, v in enumerate(vels))
    dt_max = cfl / rate if rate > 0 else T
    if dt is None:
        n_steps = max(1, int(np.ceil(T / dt_max)))
        dt = T / n_steps
    else:
        if dt > dt_max * (1 + 1e-12):
            raise ValueError(
                f"dt={dt:.3e} violates the CFL restriction; use dt <= {dt_max:.3e}"
            )
        n_steps = max(1, int(round(T / dt)))
        if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
            raise ValueError("dt must divide the horizon T")

    store_every = max(1, n_steps // max(1, n_store - 1))
    w = w0.values.copy()
    d = grid.dim
    cellvol = grid.cell_volume
    face_area = [cellvol / spacing[a] for a in range(d)]

    vplus = [np.maximum(v, 0.0) for v in vels]
    vminus = [np.minimum(v, 0.0) for v in vels]

    times = [0.0]
    stored = [w.copy()]
    outflow = [0.0]
    out_acc = 0.0

    def axis_slice(a, sl):
        idx = [slice(None)] * d
        idx[a] = sl
        return tuple(idx)

    for step in range(n_steps):
        new = w.copy()
        step_out = 0.0
        for a in range(d):
            wl = w[axis_slice(a, slice(None, -1))]
            wr = w[axis_slice(a, slice(1, None))]
            interior = (vplus[a][axis_slice(a, slice(1, -1))] * wl
                        + vminus[a][axis_slice(a, slice(1, -1))] * wr)
            lo_face = vminus[a][axis_slice(a, slice(0, 1))] * w[axis_slice(a, slice(0, 1))]
            hi_face = vplus[a][axis_slice(a, slice(-1, None))] * w[axis_slice(a, slice(-1, None))]
            flux = np.concatenate([lo_face, interior, hi_face], axis=a)
            div = (flux[axis_slice(a, slice(1, None))]
                   - flux[axis_slice(a, slice(None, -1))]) / spacing[a]
            new -= dt * div
            step_out += dt * face_area[a] * (float(hi_face.sum()) - float(lo_face.sum()))
        w = new
        out_acc += step_out
        if (step + 1) % store_every == 0 or step == n_steps - 1:
            times.append((step + 1) * dt)
            stored.append(w.copy())
            outflow.append(out_acc)

    return GridCurve(grid=grid, times=np.array(times),
                     values=np.array(stored), outflow=np.array(outflow))


# ---------------------------------------------------------------------------
# Stability statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniformRegularityReport:
    value: float
    bound: float
    slack: float
    passed: bool
    per_phi: tuple


def uniform_regularity_stat(family: CurveFamily, phis, C: float,
                            slack: float = 0.1) -> UniformRegularityReport:
    """Sup over t and phi of the P-averaged pairing, relative to int phi dx.

    Only sign-definite (even) test functions are admissible; their Lebesgue
    integrals normalize the statistic so a pass certifies an upper density
    bound C for the averaged family.
    """
    w = family.normalized_weights()
    denoms = np.array([phi.lebesgue_integral() for phi in phis])
    if np.any(denoms <= 0):
        raise ValueError("regularity statistic needs even bumps with positive integral")
    acc = np.zeros((len(phis), family.times.shape[0]))
    for wj, curve in zip(w, family.curves):
        acc += wj * curve.pairing_table(phis)
    per_phi = [float(v) for v in acc.max(axis=1) / denoms]
    value = float(max(per_phi))
    return UniformRegularityReport(value=value, bound=C, slack=slack,
                                   passed=bool(value <= C * (1 + slack)),
                                   per_phi=tuple(per_phi))


@dataclass(frozen=True)
class DecayReport:
    beta: float
    delta_list: tuple
    radius: float
    matrix: np.ndarray          # (n_delta, n_families)
    sup_over_delta: float
    delta_spread: float         # max/min over delta of the largest-n column
    passed: bool


def decay_stat(families, beta: float, delta_list, radius: float,
               s: SingularSet, x_dim: int, threshold: float = np.inf,
               spread_max: float = np.inf) -> DecayReport:
    """Triple integral of 1/(dist^beta + delta) over members, time, and B_R.

    ``families`` is a sequence indexed like the limit parameter n (one curve
    family per n); the reported headline value is the sup over delta of the
    largest-n column, a finite surrogate for sup_delta limsup_n.  A large
    spread of that column across delta means the integral is still feeling
    the regularization rather than genuine distance from the singular set;
    ``spread_max`` turns that into part of the pass criterion.
    """
    delta_list = tuple(float(x) for x in delta_list)
    mat = np.zeros((len(delta_list), len(families)))
    for j, fam in enumerate(families):
        w = fam.normalized_weights()
        t = fam.times
        for i, delta in enumerate(delta_list):
            total = 0.0
            for wj, curve in zip(w, fam.curves):
                vals = np.empty(t.shape[0])
                for k, sl in enumerate(curve.slices):
                    r2 = np.einsum("nd,nd->n", sl.points, sl.points)
                    inside = r2 <= radius * radius
                    if not inside.any():
                        vals[k] = 0.0
                        continue
                    pts = sl.points[inside][:, :x_dim]
                    pen = decay_integrand(pts, beta, delta, s)
                    vals[k] = float(pen @ sl.weights[inside])
                total += wj * float(np.trapezoid(vals, t))
            mat[i, j] = total
    last_col = mat[:, -1]
    sup_delta = float(last_col.max())
    positive = last_col[last_col > 0]
    spread = float(positive.max() / positive.min()) if positive.size else 1.0
    return DecayReport(beta=beta, delta_list=delta_list, radius=radius,
                       matrix=mat, sup_over_delta=sup_delta,
                       delta_spread=spread,
                       passed=bool(sup_delta <= threshold
                                   and spread <= spread_max))


@dataclass(frozen=True)
class SpaceTightnessReport:
    eps: float
    radii: tuple
    fractions: tuple
    passed: bool


def space_tightness_stat(family: CurveFamily, eps: float, radii,
                         threshold: float = 0.0) -> SpaceTightnessReport:
    """P-fraction of members ever placing more than eps mass outside B_R."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = family.normalized_weights()
    fracs = []
    for R in radii:
        exceeded = np.array([
            max(sl.mass_outside_ball(R) for sl in curve.slices) > eps
            for curve in family.curves
        ])
        fracs.append(float(w[exceeded].sum()))
    fr = np.array(fracs)
    monotone = bool(np.all(np.diff(fr) <= 1e-12))
    return SpaceTightnessReport(eps=eps, radii=tuple(float(r) for r in radii),
                                fractions=tuple(fracs),
                                passed=bool(monotone and fr[-1] <= threshold + 1e-12))


@dataclass(frozen=True)
class TimeTightnessReport:
    thresholds: tuple
    fractions: tuple
    variations: tuple
    passed: bool


def time_tightness_stat(family: CurveFamily, phis, M_list,
                        final_threshold: float = 0.0) -> TimeTightnessReport:
    """P-fraction of members whose pairing curves have total variation above M.

    The variation of t -> <mu_t, phi> is taken by finite differences on the
    shared grid and maximized over the supplied test functions.
    """
    if family.times.shape[0] < 3:
        raise ValueError("need at least 3 time samples for the variation")
    w = family.normalized_weights()
    tvs = []
    for curve in family.curves:
        tab = curve.pairing_table(phis)
        tvs.append(float(np.abs(np.diff(tab, axis=1)).sum(axis=1).max()))
    tvs = np.array(tvs)
    fracs = [float(w[tvs > M].sum()) for M in M_list]
    fr = np.array(fracs)
    return TimeTightnessReport(thresholds=tuple(float(m) for m in M_list),
                               fractions=tuple(fracs),
                               variations=tuple(tvs.tolist()),
                               passed=bool(fr[-1] <= final_threshold + 1e-12))


def worst_fractions_report(reports, kind: str):
    """Combine per-family tightness reports by taking worst-case fractions.

    ``kind`` is "space" or "time"; the combined report carries the
    elementwise maximum of the fraction curves and passes when that curve
    still decays to zero along its sweep.
    """
    fracs = np.max([r.fractions for r in reports], axis=0)
    r0 = reports[0]
    if kind == "space":
        monotone = bool(np.all(np.diff(fracs) <= 1e-12))
        return SpaceTightnessReport(
            eps=r0.eps, radii=r0.radii, fractions=tuple(fracs.tolist()),
            passed=bool(monotone and fracs[-1] <= 1e-12),
        )
    if kind != "time":
        raise ValueError(f"unknown tightness kind {kind!r}")
    variations = tuple(float(v) for r in reports for v in r.variations)
    return TimeTightnessReport(
        thresholds=r0.thresholds, fractions=tuple(fracs.tolist()),
        variations=variations, passed=bool(fracs[-1] <= 1e-12),
    )


@dataclass(frozen=True)
class LimitContinuityReport:
    values: tuple
    floor: float
    rel_slack: float
    passed: bool


def limit_continuity_stat(families, b: PhaseSpaceField, phis, time_fns,
                          margin: float = DEFAULT_SINGULAR_MARGIN,
                          floor: float = 1e-10,
                          rel_slack: float = 0.05) -> LimitContinuityReport:
    """P-averaged weak residual per family, checked for decrease along n.

    The sequence passes if each value is below its predecessor (up to the
    relative slack) or below the absolute floor; the floor prevents
    quadrature noise from failing an already-converged sequence.
    """
    for phi in phis:
        _check_support_margin(phi, b, margin)
    values = []
    for fam in families:
        w = fam.normalized_weights()
        t = fam.times
        tf_d = np.stack([tf.derivative(t) for tf in time_fns])
        tf_v = np.stack([tf.value(t) for tf in time_fns])
        tot = np.zeros((len(phis), len(time_fns)))
        for wj, curve in zip(w, fam.curves):
            m = np.empty((len(phis), t.shape[0]))
            g = np.empty((len(phis), t.shape[0]))
            for j, sl in enumerate(curve.slices):
                bz = eval_field(b, sl.points)
                vals_j, grads_j = bump_tables(phis, sl.points, sl.weights, bz)
                m[:, j] = vals_j
                g[:, j] = grads_j
            integrand = tf_d[None, :, :] * m[:, None, :] \
                + tf_v[None, :, :] * g[:, None, :]
            tot += wj * np.abs(np.trapezoid(integrand, t, axis=2))
        values.append(float(tot.max()))
    vals = np.array(values)
    ok = all(
        vals[i + 1] <= max(vals[i] * (1 + rel_slack), floor)
        for i in range(len(vals) - 1)
    )
    return LimitContinuityReport(values=tuple(values), floor=floor,
                                 rel_slack=rel_slack, passed=bool(ok))


def stability_gap(family: CurveFamily, reference: CurveFamily,
                  dictionary: TestFunctionDictionary) -> float:
    """P-average over members of sup_t weak_distance(family, reference).

    Members are matched by index (same underlying sample w) and the curves
    must share the time grid.
    """
    if family.num_members != reference.num_members:
        raise ValueError("family and reference have different member counts")
    if family.times.shape != reference.times.shape or \
            not np.allclose(family.times, reference.times, atol=1e-12):
        raise ValueError("family and reference must share the time grid")
    w = family.normalized_weights()
    total = 0.0
    for wj, cu, ref in zip(w, family.curves, reference.curves):
        sup = max(
            weak_distance(a, bslice, dictionary)
            for a, bslice in zip(cu.slices, ref.slices)
        )
        total += wj * sup
    return float(total)


# ---------------------------------------------------------------------------
# Aggregated report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    """All five hypothesis statistics plus the conclusion gap, with parameters.

    ``decay`` may be None when the field has no singular set (the decay
    statistic is then vacuous); ``decay_skip_reason`` records why.
    """

    regularity: UniformRegularityReport
    decay: DecayReport
    space_tightness: SpaceTightnessReport
    time_tightness: TimeTightnessReport
    limit_continuity: LimitContinuityReport
    gap_values: tuple              # conclusion gap per family index n
    gap_decreasing: bool
    decay_skip_reason: str = ""

    @property
    def all_passed(self) -> bool:
        return bool(
            self.regularity.passed
            and (self.decay is None or self.decay.passed)
            and self.space_tightness.passed and self.time_tightness.passed
            and self.limit_continuity.passed and self.gap_decreasing
        )

    def to_json_dict(self) -> dict:
        d = asdict(self)
        if self.decay is None:
            d["decay"] = {"skipped": self.decay_skip_reason or "no singular set"}
        else:
            d["decay"]["matrix"] = np.asarray(self.decay.matrix).tolist()
        d["all_passed"] = self.all_passed
        d["schema"] = "rlflab.stability_report.v1"
        return d

    def save_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2)

    def export_csv(self, directory) -> list:
        """One CSV of (index, statistic) per hypothesis, for plotting."""
        directory = str(directory)
        written = []

        def dump(name, rows, header):
            path = f"{directory}/{name}.csv"
            with open(path, "w", newline="") as f:
                wtr = csv.writer(f)
                wtr.writerow(header)
                wtr.writerows(rows)
            written.append(path)

        dump("regularity", list(enumerate(self.regularity.per_phi)),
             ["phi_index", "value"])
        rows = []
        if self.decay is not None:
            for i, delta in enumerate(self.decay.delta_list):
                for j in range(self.decay.matrix.shape[1]):
                    rows.append([delta, j, repr(float(self.decay.matrix[i, j]))])
        dump("decay", rows, ["delta", "family_index", "value"])
        dump("space_tightness",
             list(zip(self.space_tightness.radii, self.space_tightness.fractions)),
             ["radius", "fraction"])
        dump("time_tightness",
             list(zip(self.time_tightness.thresholds, self.time_tightness.fractions)),
             ["threshold", "fraction"])
        dump("limit_continuity", list(enumerate(self.limit_continuity.values)),
             ["family_index", "value"])
        dump("stability_gap", list(enumerate(self.gap_values)),
             ["family_index", "value"])
        return written
