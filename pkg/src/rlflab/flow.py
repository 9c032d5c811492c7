"""Flows of Hamiltonian fields: trajectory integration, flow maps, superposition.

The integrator is classical RK4 with one twist: near a singular set the step
is capped at ``safety * dist / speed`` so no single step can cross the
singularity, and a trajectory reaching ``min_dist`` is stopped and flagged
instead of producing garbage.  :func:`flow_map` advances a whole particle
cloud with the same rule applied per particle, vectorized, and resamples to
a shared time grid.

:func:`ode_residual` certifies a computed trajectory against the integral
form of the ODE with an independent quadrature.  :func:`check_rlf` combines
that certificate with kernel density bounds on the pushforwards, the two
defining properties of a regular flow.  :func:`superpose` turns a flow map
plus an initial measure into a measure curve, and :func:`measure_flow` lifts
this to ensembles.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline

from .fields import PhaseSpaceField, eval_field
from .measures import (
    GridSpec,
    MeasureEnsemble,
    ParticleMeasure,
    check_density_bound,
    default_bandwidth,
    density_estimate,
)
from .weakform import CurveFamily, MeasureCurve

__all__ = [
    "StepControl",
    "Trajectory",
    "FlowMap",
    "RLFReport",
    "integrate_trajectory",
    "ode_residual",
    "flow_map",
    "check_rlf",
    "superpose",
    "measure_flow",
    "load_flow_map",
]


@dataclass(frozen=True)
class StepControl:
    """Step-size policy for the guarded RK4 integrator.

    ``dt`` is the nominal step; near a singular set the effective step is
    min(dt, safety * dist / speed) with speed = max(|p|, |c|, 1e-9), floored
    at ``dt_floor``.  A trajectory closer than ``min_dist`` to the singular
    set stops with a singular-hit status; one beyond ``escape_radius`` (or
    with non-finite state) stops as escaped.  ``max_invalid`` caps the mass
    fraction a flow map may lose to stopped trajectories.
    """

    dt: float = 0.01
    safety: float = 0.1
    min_dist: float = 1e-4
    dt_floor: float = 1e-9
    escape_radius: float = 1e6
    max_invalid: float = 1e-3
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.dt <= 0 or self.safety <= 0 or self.min_dist <= 0:
            raise ValueError("dt, safety and min_dist must be positive")
        if self.dt_floor <= 0 or self.dt_floor > self.dt:
            raise ValueError("need 0 < dt_floor <= dt")


def _field_raw(b: PhaseSpaceField, z: np.ndarray) -> np.ndarray:
    """(p, c(x)) without finiteness checks; rows too close to S give inf/nan."""
    x, p = z[:, : b.n], z[:, b.n:]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        c = -b.potential.gradient(x)
    return np.concatenate([p, c], axis=1)


# ---------------------------------------------------------------------------
# Single trajectories
# ---------------------------------------------------------------------------

COMPLETE = "complete"
SINGULAR_HIT = "singular_hit"
ESCAPED = "escaped"


@dataclass(frozen=True)
class Trajectory:
    """One integrated trajectory with its internal step skeleton.

    ``derivs`` holds the field value at every node, which makes the skeleton
    a cubic Hermite interpolant (:meth:`states_at`) and feeds the integral
    certificate in :func:`ode_residual`.  ``stopped_at`` is the time at which
    integration ended early (singular hit or escape), None when the horizon
    was reached.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    horizon: float
    status: str = COMPLETE
    stopped_at: float = None
    min_singular_dist: float = np.inf

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def states_at(self, t) -> np.ndarray:
        """Dense output by cubic Hermite interpolation of the skeleton."""
        spline = CubicHermiteSpline(self.times, self.states, self.derivs, axis=0)
        t = np.asarray(t, dtype=float)
        end = self.times[-1]
        if np.any(t < -1e-12) or np.any(t > end + 1e-12):
            raise ValueError(f"trajectory only defined on [0, {end}]")
        return spline(np.clip(t, 0.0, end))


def integrate_trajectory(b: PhaseSpaceField, z0, T: float,
                         control: StepControl = None) -> Trajectory:
    """Guarded adaptive RK4 for a single phase point; see :class:`StepControl`."""
    ctl = control or StepControl()
    z = np.asarray(z0, dtype=float).ravel()
    if z.shape[0] != b.dim:
        raise ValueError(f"initial state has dim {z.shape[0]}, field has {b.dim}")
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    n = b.n
    d0 = float(b.singular_set.distance(z[None, :n])[0])
    if d0 == 0.0:
        raise ValueError("initial point lies on the singular set")
    k = _field_raw(b, z[None, :])[0]
    if not np.all(np.isfinite(k)):
        raise ValueError(f"field is not finite at the initial state {z}")
    ts, zs, ks = [0.0], [z.copy()], [k.copy()]
    t = 0.0
    status, stopped_at = COMPLETE, None
    dmin = d0
    steps = 0
    while t < T:
        if steps >= ctl.max_steps:
            raise RuntimeError(f"exceeded {ctl.max_steps} steps at t={t:.6g}")
        d = float(b.singular_set.distance(z[None, :n])[0])
        dmin = min(dmin, d)
        if d < ctl.min_dist:
            status, stopped_at = SINGULAR_HIT, t
            break
        if float(np.abs(z).max()) > ctl.escape_radius:
            status, stopped_at = ESCAPED, t
            break
        speed = max(float(np.linalg.norm(z[n:])),
                    float(np.linalg.norm(k[n:])), 1e-9)
        h = ctl.dt if not np.isfinite(d) else min(ctl.dt, ctl.safety * d / speed)
        h = max(h, ctl.dt_floor)
        if h >= T - t:
            h, t_next = T - t, T
        else:
            t_next = t + h
        k1 = k
        k2 = _field_raw(b, (z + 0.5 * h * k1)[None, :])[0]
        k3 = _field_raw(b, (z + 0.5 * h * k2)[None, :])[0]
        k4 = _field_raw(b, (z + h * k3)[None, :])[0]
        z_new = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        k_new = _field_raw(b, z_new[None, :])[0]
        if not (np.all(np.isfinite(z_new)) and np.all(np.isfinite(k_new))
                and np.all(np.isfinite(k2 + k3 + k4))):
            status, stopped_at = ESCAPED, t
            break
        z, t, k = z_new, t_next, k_new
        ts.append(t)
        zs.append(z.copy())
        ks.append(k.copy())
        steps += 1
    return Trajectory(times=np.array(ts), states=np.array(zs),
                      derivs=np.array(ks), horizon=float(T),
                      status=status, stopped_at=stopped_at,
                      min_singular_dist=dmin)


def ode_residual(traj: Trajectory, b: PhaseSpaceField = None) -> float:
    """Defect of the integral equation X(t) = X(0) + int_0^t b(X(s)) ds.

    The integral is evaluated by composite Simpson quadrature on the
    trajectory's own skeleton, an estimate independent of the RK4 update, so
    systematic integrator errors do not cancel.  With ``b`` supplied the
    integrand is re-evaluated from the field at the stored states; otherwise
    the stored node derivatives are used.  Returns the sup over nodes of the
    Euclidean defect norm.
    """
    if traj.status != COMPLETE:
        raise ValueError(f"trajectory is {traj.status}, not complete")
    if traj.times.shape[0] < 2:
        return 0.0
    derivs = traj.derivs if b is None else eval_field(b, traj.states)
    integral = cumulative_simpson(derivs, x=traj.times, axis=0, initial=0.0)
    defect = traj.states - traj.states[0][None, :] - integral
    return float(np.linalg.norm(defect, axis=1).max())


# ---------------------------------------------------------------------------
# Flow maps for particle clouds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowMap:
    """Time-sampled flow of the base measure's particle cloud.

    ``states[j]`` is the cloud at ``times[j]`` (a shared uniform grid by
    default); particles stopped near the singular set or escaped are frozen
    at their last valid position and masked out in ``valid``.
    """

    base: ParticleMeasure
    times: np.ndarray            # (M,)
    states: np.ndarray           # (M, N, d)
    valid: np.ndarray            # (N,) bool
    field: PhaseSpaceField = None
    field_name: str = "field"

    @property
    def initial(self) -> np.ndarray:
        return self.base.points

    @property
    def num_particles(self) -> int:
        return self.base.num_points

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def num_invalid(self) -> int:
        return int((~self.valid).sum())

    @property
    def invalid_mass_fraction(self) -> float:
        total = self.base.total_mass
        if total <= 0:
            return 0.0
        return float(self.base.weights[~self.valid].sum() / total)

    def state_at(self, t: float, atol: float = 1e-9) -> np.ndarray:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > atol:
            raise ValueError(f"no stored state at t={t}; nearest {self.times[j]}")
        return self.states[j]

    def pushforward_at(self, t: float) -> ParticleMeasure:
        """X(t,.)#(valid part of the base measure)."""
        return ParticleMeasure(self.state_at(t)[self.valid],
                               self.base.weights[self.valid])

    def save(self, directory) -> None:
        """CSV bundle: manifest.json plus initial/weights/valid/state tables."""
        os.makedirs(directory, exist_ok=True)
        d = self.dim
        header = "particle," + ",".join(f"x{a}" for a in range(d))
        idx = np.arange(self.num_particles)

        def table(path, arr):
            data = np.column_stack([idx, arr])
            np.savetxt(path, data, delimiter=",", header=header, comments="",
                       fmt=["%d"] + ["%.17g"] * arr.shape[1])

        table(os.path.join(directory, "initial.csv"), self.base.points)
        state_files = []
        for j in range(self.times.shape[0]):
            name = f"state_{j:04d}.csv"
            table(os.path.join(directory, name), self.states[j])
            state_files.append(name)
        np.savetxt(os.path.join(directory, "weights.csv"),
                   np.column_stack([idx, self.base.weights]),
                   delimiter=",", header="particle,weight", comments="",
                   fmt=["%d", "%.17g"])
        np.savetxt(os.path.join(directory, "valid.csv"),
                   np.column_stack([idx, self.valid.astype(int)]),
                   delimiter=",", header="particle,valid", comments="", fmt="%d")
        manifest = {
            "schema": "rlflab.flow_map.v1",
            "field": self.field_name,
            "dim": d,
            "num_particles": self.num_particles,
            "times": self.times.tolist(),
            "num_invalid": self.num_invalid,
            "invalid_mass_fraction": self.invalid_mass_fraction,
            "files": {"initial": "initial.csv", "weights": "weights.csv",
                      "valid": "valid.csv", "states": state_files},
        }
        with open(os.path.join(directory, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2)


def load_flow_map(directory, b: PhaseSpaceField = None) -> FlowMap:
    """Rebuild a flow map from its CSV bundle; the field itself is optional."""
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("schema") != "rlflab.flow_map.v1":
        raise ValueError(f"unrecognized flow map bundle in {directory}")

    def table(name):
        return np.loadtxt(os.path.join(directory, name), delimiter=",",
                          skiprows=1, ndmin=2)[:, 1:]

    initial = table(manifest["files"]["initial"])
    weights = table(manifest["files"]["weights"]).ravel()
    states = np.stack([table(name) for name in manifest["files"]["states"]])
    valid = table(manifest["files"]["valid"]).ravel().astype(bool)
    return FlowMap(base=ParticleMeasure(initial, weights),
                   times=np.array(manifest["times"], dtype=float),
                   states=states, valid=valid, field=b,
                   field_name=manifest["field"])


def _advance_fixed(b, z, dt_interval, ctl):
    """Fixed-step RK4 over one output interval; for fields without singular set."""
    nsub = max(1, int(np.ceil(dt_interval / ctl.dt - 1e-12)))
    h = dt_interval / nsub
    for _ in range(nsub):
        k1 = _field_raw(b, z)
        k2 = _field_raw(b, z + (0.5 * h) * k1)
        k3 = _field_raw(b, z + (0.5 * h) * k2)
        k4 = _field_raw(b, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    with np.errstate(invalid="ignore"):
        alive = np.all(np.isfinite(z), axis=1) & \
            (np.abs(z).max(axis=1) <= ctl.escape_radius)
    return z, alive


def _advance_guarded(b, z, dt_interval, ctl):
    """Per-particle adaptive RK4 over one output interval.

    Each row advances with its own guarded step until its local clock reaches
    the interval length.  Rows that reach ``min_dist``, escape, or go
    non-finite stop where they are and come back flagged dead.
    """
    N = z.shape[0]
    n = b.n
    out = z.copy()
    tau = np.zeros(N)
    alive = np.ones(N, dtype=bool)
    done = np.zeros(N, dtype=bool)
    end = dt_interval * (1.0 - 1e-12)
    iters = 0
    while True:
        idx = np.where(alive & ~done)[0]
        if idx.size == 0:
            break
        if iters >= ctl.max_steps:
            raise RuntimeError(
                f"exceeded {ctl.max_steps} substeps; {idx.size} particles stuck"
            )
        za = out[idx]
        d = b.singular_set.distance(za[:, :n])
        bad = (d < ctl.min_dist) | (np.abs(za).max(axis=1) > ctl.escape_radius)
        if bad.any():
            alive[idx[bad]] = False
            idx, za, d = idx[~bad], za[~bad], d[~bad]
            if idx.size == 0:
                continue
        k1 = _field_raw(b, za)
        ok = np.all(np.isfinite(k1), axis=1)
        if not ok.all():
            alive[idx[~ok]] = False
            idx, za, d, k1 = idx[ok], za[ok], d[ok], k1[ok]
            if idx.size == 0:
                continue
        speed = np.maximum(
            np.maximum(np.linalg.norm(za[:, n:], axis=1),
                       np.linalg.norm(k1[:, n:], axis=1)),
            1e-9,
        )
        h = np.minimum(ctl.dt, ctl.safety * d / speed)
        h = np.maximum(h, ctl.dt_floor)
        h = np.minimum(h, dt_interval - tau[idx])
        hcol = h[:, None]
        k2 = _field_raw(b, za + 0.5 * hcol * k1)
        k3 = _field_raw(b, za + 0.5 * hcol * k2)
        k4 = _field_raw(b, za + hcol * k3)
        z_new = za + (hcol / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        good = np.all(np.isfinite(z_new), axis=1)
        if not good.all():
            alive[idx[~good]] = False
        upd = idx[good]
        out[upd] = z_new[good]
        tau[upd] += h[good]
        done[upd] = tau[upd] >= end
        iters += 1
    return out, alive


def flow_map(b: PhaseSpaceField, nu: ParticleMeasure, T: float,
             store_times=None, control: StepControl = None) -> FlowMap:
    """Advance the cloud of a reference measure, storing snapshots on a grid.

    ``store_times`` must increase from 0 to T (default: 33 uniform samples).
    Particles are advanced together; the singular guard acts per particle,
    so a few close encounters do not slow the whole cloud down.  Raises when
    the mass on stopped particles exceeds ``control.max_invalid`` of the
    total, since such a flow is useless as a regular-flow surrogate.
    """
    ctl = control or StepControl()
    if not isinstance(nu, ParticleMeasure):
        nu = ParticleMeasure(np.atleast_2d(np.asarray(nu, dtype=float)),
                             np.full(np.atleast_2d(nu).shape[0],
                                     1.0 / np.atleast_2d(nu).shape[0]))
    pts = nu.points
    if pts.shape[1] != b.dim:
        raise ValueError(f"measure has dim {pts.shape[1]}, field has {b.dim}")
    if store_times is None:
        store_times = np.linspace(0.0, T, 33)
    st = np.asarray(store_times, dtype=float)
    if st.ndim != 1 or st.shape[0] < 2 or abs(st[0]) > 1e-12 or \
            abs(st[-1] - T) > 1e-9 * max(T, 1.0) or np.any(np.diff(st) <= 0):
        raise ValueError("store_times must increase from 0 to T")

    M, N = st.shape[0], pts.shape[0]
    states = np.empty((M, N, pts.shape[1]))
    states[0] = pts
    valid = np.ones(N, dtype=bool)
    z = pts.copy()
    guarded = not b.singular_set.is_empty
    for j in range(M - 1):
        dt_interval = st[j + 1] - st[j]
        idx = np.where(valid)[0]
        if idx.size:
            if guarded:
                z_new, alive = _advance_guarded(b, z[idx], dt_interval, ctl)
            else:
                z_new, alive = _advance_fixed(b, z[idx], dt_interval, ctl)
            z[idx] = z_new
            valid[idx[~alive]] = False
        states[j + 1] = z
    fm = FlowMap(base=nu, times=st, states=states, valid=valid,
                 field=b, field_name=b.name)
    if fm.invalid_mass_fraction > ctl.max_invalid:
        raise ValueError(
            f"flow lost {fm.invalid_mass_fraction:.3e} of its mass to stopped "
            f"trajectories (limit {ctl.max_invalid:.3e})"
        )
    return fm


# ---------------------------------------------------------------------------
# Flow regularity: ODE certificate + pushforward density bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RLFReport:
    """Evidence that a flow map is a regular flow for its base measure.

    Two checks, matching the two defining properties: sampled trajectories
    satisfy the integral form of the ODE to ``ode_tol``, and the pushforward
    of the base measure at evenly spaced times has KDE density at most
    C * (1 + slack).
    """

    ode_residuals: tuple
    ode_tol: float
    density_max: float
    bound: float
    slack: float
    invalid_mass_fraction: float
    checked_times: tuple
    per_time_max: tuple = field(repr=False, default=())
    passed: bool = False

    @property
    def max_ode_residual(self) -> float:
        return max(self.ode_residuals) if self.ode_residuals else 0.0

    def to_json_dict(self) -> dict:
        return {
            "schema": "rlflab.rlf_report.v1",
            "ode_residuals": list(self.ode_residuals),
            "ode_tol": self.ode_tol,
            "density_max": self.density_max,
            "bound": self.bound,
            "slack": self.slack,
            "invalid_mass_fraction": self.invalid_mass_fraction,
            "checked_times": list(self.checked_times),
            "per_time_max": list(self.per_time_max),
            "passed": self.passed,
        }


def check_rlf(fm: FlowMap, C: float, grid: GridSpec, bandwidth: float = None,
              slack: float = 0.1, ode_tol: float = 1e-6,
              n_ode_samples: int = 5, n_time_checks: int = 5,
              rng=None, control: StepControl = None) -> RLFReport:
    """Certify the two regular-flow properties for a computed flow map."""
    if fm.field is None:
        raise ValueError("flow map carries no field reference; pass one at load")
    valid_idx = np.where(fm.valid)[0]
    if valid_idx.size == 0:
        raise ValueError("flow has no valid particles left")
    gen = np.random.default_rng(rng)
    k = min(n_ode_samples, valid_idx.size)
    sample = gen.choice(valid_idx, size=k, replace=False)
    residuals = []
    for i in np.sort(sample):
        traj = integrate_trajectory(fm.field, fm.initial[i], fm.horizon, control)
        residuals.append(ode_residual(traj))

    w = fm.base.weights[fm.valid]
    check_js = np.unique(np.linspace(0, fm.times.shape[0] - 1,
                                     n_time_checks).astype(int))
    per_time = []
    for j in check_js:
        pm = ParticleMeasure(fm.states[j][fm.valid], w)
        bw = bandwidth if bandwidth is not None else default_bandwidth(pm)
        dens = density_estimate(pm, grid, bw)
        per_time.append(check_density_bound(dens, C, slack=slack).max_density)
    density_max = float(max(per_time))
    passed = (max(residuals) <= ode_tol
              and density_max <= C * (1.0 + slack))
    return RLFReport(ode_residuals=tuple(residuals), ode_tol=ode_tol,
                     density_max=density_max, bound=C, slack=slack,
                     invalid_mass_fraction=fm.invalid_mass_fraction,
                     checked_times=tuple(fm.times[check_js].tolist()),
                     per_time_max=tuple(per_time), passed=bool(passed))


# ---------------------------------------------------------------------------
# Superposition: flows acting on measures
# ---------------------------------------------------------------------------

def superpose(fm: FlowMap, mu: ParticleMeasure) -> MeasureCurve:
    """The measure curve t -> X(t, .)#mu along a stored flow map.

    ``mu`` must be carried by the flow's base cloud (same points, its own
    weights).  Weights ride along unchanged, so each slice is the exact
    pushforward of the valid part of ``mu``, and the t=0 slice is ``mu``
    itself up to dropped invalid particles (recorded as the mass deficit).
    """
    if fm.initial.shape != mu.points.shape or \
            not np.allclose(fm.initial, mu.points, atol=1e-12):
        raise ValueError("measure is supported off the flow's base cloud")
    invalid_mass = float(mu.weights[~fm.valid].sum())
    w = mu.weights[fm.valid]
    slices = tuple(
        ParticleMeasure(fm.states[j][fm.valid], w)
        for j in range(fm.times.shape[0])
    )
    return MeasureCurve(times=fm.times, slices=slices,
                        provenance=f"superpose[{fm.field_name}]",
                        mass_deficit=invalid_mass)


def measure_flow(b: PhaseSpaceField, nu: MeasureEnsemble, T: float,
                 store_times=None, control: StepControl = None) -> CurveFamily:
    """Flow every member of an ensemble: the curve family {t -> mu(t, mu_j)}.

    All member clouds are advanced as one flow map on the union support (the
    field is autonomous) and split back afterwards, so the cost matches a
    single large flow map.
    """
    counts = [m.num_points for m in nu.measures]
    stacked = ParticleMeasure(
        np.concatenate([m.points for m in nu.measures], axis=0),
        np.concatenate([w * m.weights for w, m in nu.members]),
    )
    fm = flow_map(b, stacked, T, store_times=store_times, control=control)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    curves = []
    for j, mu in enumerate(nu.measures):
        lo, hi = offsets[j], offsets[j + 1]
        member_flow = FlowMap(base=mu, times=fm.times,
                              states=fm.states[:, lo:hi], valid=fm.valid[lo:hi],
                              field=fm.field, field_name=fm.field_name)
        curves.append(superpose(member_flow, mu))
    return CurveFamily(curves=tuple(curves), weights=nu.weights)
