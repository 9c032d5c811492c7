"""Finite measures as weighted particle clouds, and measures on the space of measures.

Measures on R^d are represented exactly as weighted point clouds
(:class:`ParticleMeasure`); families of such measures with outer weights form a
:class:`MeasureEnsemble`.  Grids enter only through kernel density estimation
(:func:`density_estimate`), which is the numerical surrogate used to verify
"bounded by a constant times Lebesgue" regularity conditions, and through the
finite-volume oracle elsewhere in the package.

Weak convergence is metrized by a dictionary of smooth compactly supported
bump functions (:class:`TestFunctionDictionary`, :func:`dyadic_dictionary`)
through the bounded pseudometric :func:`weak_distance`.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.integrate import quad
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

__all__ = [
    "ParticleMeasure",
    "MeasureEnsemble",
    "GridSpec",
    "GridDensity",
    "BumpFunction",
    "TestFunctionDictionary",
    "DensityBoundReport",
    "RegularityReport",
    "integrate_test",
    "pushforward",
    "expectation",
    "density_estimate",
    "bin_density",
    "default_bandwidth",
    "check_density_bound",
    "check_regular",
    "dirac_ensemble",
    "product_ensemble",
    "weak_distance",
    "dyadic_dictionary",
    "uniform_cloud",
    "grid_cloud",
    "particles_from_density",
]

PROBABILITY_TOL = 1e-12


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParticleMeasure:
    """Finite nonnegative measure on R^d carried by finitely many weighted points.

    Parameters
    ----------
    points : ndarray (N, d)
        Particle locations.
    weights : ndarray (N,)
        Nonnegative masses, one per particle.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise ValueError(
                f"points ({pts.shape[0]}) and weights ({w.shape[0]}) differ in length"
            )
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("non-finite particle coordinates")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if not np.isfinite(w.sum()):
            raise ValueError("total mass must be finite")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def is_probability(self, tol: float = PROBABILITY_TOL) -> bool:
        return abs(self.total_mass - 1.0) <= tol

    def normalized(self, mass: float = 1.0) -> "ParticleMeasure":
        """Rescale weights so the total mass equals ``mass``."""
        total = self.total_mass
        if total <= 0:
            raise ValueError("cannot normalize a zero measure")
        return ParticleMeasure(self.points, self.weights * (mass / total))

    def translated(self, v) -> "ParticleMeasure":
        v = np.asarray(v, dtype=float).ravel()
        return ParticleMeasure(self.points + v[None, :], self.weights)

    def mass_outside_ball(self, radius: float, center=None) -> float:
        """Mass carried by particles with |z - center| > radius."""
        pts = self.points
        if center is not None:
            pts = pts - np.asarray(center, dtype=float)[None, :]
        r2 = np.einsum("nd,nd->n", pts, pts)
        return float(self.weights[r2 > radius * radius].sum())

    def to_json_dict(self) -> dict:
        return {
            "schema": "rlflab.particle_measure.v1",
            "dim": self.dim,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ParticleMeasure":
        pm = ParticleMeasure(np.asarray(d["points"], dtype=float),
                             np.asarray(d["weights"], dtype=float))
        if pm.dim != d["dim"]:
            raise ValueError("dim field inconsistent with points")
        return pm

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f)

    @staticmethod
    def load(path) -> "ParticleMeasure":
        with open(path) as f:
            return ParticleMeasure.from_json_dict(json.load(f))


@dataclass(frozen=True)
class MeasureEnsemble:
    """Weighted family of particle measures: a measure on the space of measures.

    ``members`` is a sequence of ``(ensemble_weight, ParticleMeasure)`` pairs;
    the ensemble weights sum to the total outer mass (1 for a probability
    ensemble).  All member measures share a common dimension.
    """

    members: tuple

    def __post_init__(self):
        members = tuple((float(w), m) for (w, m) in self.members)
        if not members:
            raise ValueError("ensemble must have at least one member")
        dims = {m.dim for _, m in members}
        if len(dims) != 1:
            raise ValueError(f"members have inconsistent dims: {sorted(dims)}")
        if any(w < 0 for w, _ in members):
            raise ValueError("ensemble weights must be nonnegative")
        object.__setattr__(self, "members", members)

    @property
    def dim(self) -> int:
        return self.members[0][1].dim

    @property
    def num_members(self) -> int:
        return len(self.members)

    @property
    def total_weight(self) -> float:
        return float(sum(w for w, _ in self.members))

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.members])

    @property
    def measures(self) -> tuple:
        return tuple(m for _, m in self.members)

    def to_json_dict(self) -> dict:
        return {
            "schema": "rlflab.measure_ensemble.v1",
            "dim": self.dim,
            "members": [
                {"weight": w, "measure": m.to_json_dict()} for w, m in self.members
            ],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "MeasureEnsemble":
        members = [(e["weight"], ParticleMeasure.from_json_dict(e["measure"]))
                   for e in d["members"]]
        return MeasureEnsemble(tuple(members))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f)

    @staticmethod
    def load(path) -> "MeasureEnsemble":
        with open(path) as f:
            return MeasureEnsemble.from_json_dict(json.load(f))


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned uniform grid: per-axis bounds and cell counts."""

    box: np.ndarray          # (d, 2) lower/upper bounds
    cells: tuple             # cells per axis

    def __post_init__(self):
        box = np.atleast_2d(np.asarray(self.box, dtype=float))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if box.shape != (len(cells), 2):
            raise ValueError("box must be (d, 2) matching len(cells)")
        if np.any(box[:, 1] <= box[:, 0]):
            raise ValueError("box upper bounds must exceed lower bounds")
        if any(c < 1 for c in cells):
            raise ValueError("cells per axis must be positive")
        object.__setattr__(self, "box", _readonly(box))
        object.__setattr__(self, "cells", cells)

    @property
    def dim(self) -> int:
        return self.box.shape[0]

    @property
    def spacing(self) -> np.ndarray:
        return (self.box[:, 1] - self.box[:, 0]) / np.array(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def edges(self, axis: int) -> np.ndarray:
        lo, hi = self.box[axis]
        return np.linspace(lo, hi, self.cells[axis] + 1)

    def centers(self, axis: int) -> np.ndarray:
        e = self.edges(axis)
        return 0.5 * (e[:-1] + e[1:])

    def center_mesh(self) -> list:
        return np.meshgrid(*[self.centers(a) for a in range(self.dim)],
                           indexing="ij")

    def all_centers(self) -> np.ndarray:
        """All cell centers as an (n_cells, d) array in C order."""
        mesh = self.center_mesh()
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative density sampled on a uniform grid (mass per unit volume)."""

    grid: GridSpec
    values: np.ndarray
    spill: float = 0.0       # mass that fell outside the box during estimation

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != tuple(self.grid.cells):
            raise ValueError(f"values shape {vals.shape} != grid cells {self.grid.cells}")
        if np.any(vals < 0):
            raise ValueError("density values must be nonnegative")
        if not np.isfinite(vals.sum()):
            raise ValueError("density integral must be finite")
        object.__setattr__(self, "values", _readonly(vals))

    @property
    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    @property
    def max_value(self) -> float:
        return float(self.values.max())

    def to_csv(self, path) -> None:
        """One row per cell: flat index, center coordinates, density value."""
        centers = self.grid.all_centers()
        vals = self.values.ravel()
        d = self.grid.dim
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index"] + [f"x{a}" for a in range(d)] + ["value"])
            for i in range(vals.shape[0]):
                w.writerow([i] + [repr(c) for c in centers[i]] + [repr(vals[i])])

    @staticmethod
    def from_csv(path, grid: GridSpec) -> "GridDensity":
        vals = np.zeros(int(np.prod(grid.cells)))
        with open(path) as f:
            reader = csv.reader(f)
            next(reader)
            for row in reader:
                vals[int(row[0])] = float(row[-1])
        return GridDensity(grid, vals.reshape(grid.cells))


# ---------------------------------------------------------------------------
# Pairing, pushforward, expectation
# ---------------------------------------------------------------------------

def integrate_test(mu: ParticleMeasure, phi) -> float:
    """Pairing <mu, phi> = sum_i w_i phi(x_i), exact for particle measures.

    ``phi`` must be vectorized: it receives the full (N, d) point array and
    returns (N,) values.
    """
    vals = np.asarray(phi(mu.points), dtype=float).ravel()
    if vals.shape[0] != mu.num_points:
        raise ValueError("test function did not return one value per point")
    return float(vals @ mu.weights)


def pushforward(mu: ParticleMeasure, transport) -> ParticleMeasure:
    """Image measure: move every particle through ``transport``, keep weights.

    ``transport`` maps (N, d) -> (N, d') vectorized.  Total mass is preserved
    exactly because weights are untouched.  A non-finite image coordinate
    (e.g. a map undefined at that point) raises, naming the first bad index.
    """
    new_pts = np.atleast_2d(np.asarray(transport(mu.points), dtype=float))
    if new_pts.shape[0] != mu.num_points:
        raise ValueError("transport did not return one image point per particle")
    bad = ~np.all(np.isfinite(new_pts), axis=1)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise ValueError(f"transport undefined at point index {idx}: {mu.points[idx]}")
    return ParticleMeasure(new_pts, mu.weights)


def expectation(nu: MeasureEnsemble) -> ParticleMeasure:
    """Flatten an ensemble into its expectation measure.

    Every member point enters with weight ensemble_weight * member_weight, so
    the pairing identity  int phi dE[nu] = sum_j w_j int phi dmu_j  holds
    exactly.
    """
    pts = np.concatenate([m.points for _, m in nu.members], axis=0)
    wts = np.concatenate([w * m.weights for w, m in nu.members])
    return ParticleMeasure(pts, wts)


# ---------------------------------------------------------------------------
# Kernel density estimation and regularity checks
# ---------------------------------------------------------------------------

def default_bandwidth(mu: ParticleMeasure, factor: float = 2.0) -> float:
    """Bandwidth rule: ``factor`` times the mean nearest-neighbor spacing."""
    if mu.num_points < 2:
        raise ValueError("need at least two points for the bandwidth rule")
    tree = cKDTree(mu.points)
    dists, _ = tree.query(mu.points, k=2)
    return factor * float(dists[:, 1].mean())


def density_estimate(mu: ParticleMeasure, grid: GridSpec, bandwidth: float,
                     truncate: float = 5.0) -> GridDensity:
    """Gaussian-kernel density of a particle cloud on a uniform grid.

    The cloud is binned onto the grid and smoothed with an isotropic Gaussian
    of standard deviation ``bandwidth``; kernel mass crossing the box boundary
    is dropped, so ``integral = total_mass - spill`` with the spill reported on
    the result.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if grid.dim != mu.dim:
        raise ValueError(f"grid dim {grid.dim} != measure dim {mu.dim}")
    edges = [grid.edges(a) for a in range(grid.dim)]
    hist, _ = np.histogramdd(mu.points, bins=edges, weights=mu.weights)
    sigma_cells = bandwidth / grid.spacing
    smooth = ndimage.gaussian_filter(hist, sigma=sigma_cells, mode="constant",
                                     truncate=truncate)
    smooth = np.clip(smooth, 0.0, None)
    values = smooth / grid.cell_volume
    spill = mu.total_mass - float(smooth.sum())
    return GridDensity(grid, values, spill=spill)


def bin_density(mu: ParticleMeasure, grid: GridSpec) -> GridDensity:
    """Cell-average density of a particle cloud: plain histogram, no smoothing.

    Useful when comparing a particle measure against a finite-volume field on
    the same grid, where kernel smoothing would add its own bias.
    """
    if grid.dim != mu.dim:
        raise ValueError(f"grid dim {grid.dim} != measure dim {mu.dim}")
    edges = [grid.edges(a) for a in range(grid.dim)]
    hist, _ = np.histogramdd(mu.points, bins=edges, weights=mu.weights)
    spill = mu.total_mass - float(hist.sum())
    return GridDensity(grid, hist / grid.cell_volume, spill=spill)


@dataclass(frozen=True)
class DensityBoundReport:
    max_density: float
    bound: float
    slack: float
    passed: bool


def check_density_bound(rho: GridDensity, C: float,
                        slack: float = 0.1) -> DensityBoundReport:
    """Check sup density <= C * (1 + slack); the slack absorbs KDE bias."""
    if C <= 0:
        raise ValueError("C must be positive")
    mx = rho.max_value
    return DensityBoundReport(max_density=mx, bound=C, slack=slack,
                              passed=bool(mx <= C * (1.0 + slack)))


@dataclass(frozen=True)
class RegularityReport:
    max_density: float
    bound: float
    slack: float
    passed: bool
    spill: float
    spill_warning: bool


def check_regular(nu: MeasureEnsemble, C: float, grid: GridSpec,
                  bandwidth: float, slack: float = 0.1,
                  spill_tol: float = 1e-3) -> RegularityReport:
    """Regularity of an ensemble: KDE of its expectation stays below C.

    Composes :func:`expectation`, :func:`density_estimate` and
    :func:`check_density_bound`.  Mass falling outside the grid box is
    reported as a spill warning rather than an error.
    """
    emeasure = expectation(nu)
    dens = density_estimate(emeasure, grid, bandwidth)
    rep = check_density_bound(dens, C, slack=slack)
    spill_warning = dens.spill > spill_tol * max(emeasure.total_mass, 1e-300)
    if spill_warning:
        logger.warning("check_regular: %.3g of mass outside the grid box", dens.spill)
    return RegularityReport(max_density=rep.max_density, bound=C, slack=slack,
                            passed=rep.passed, spill=dens.spill,
                            spill_warning=bool(spill_warning))


# ---------------------------------------------------------------------------
# Ensemble constructors
# ---------------------------------------------------------------------------

def dirac_ensemble(rho, n: int, rng=None) -> MeasureEnsemble:
    """Ensemble of Dirac members distributed like a density: x -> delta_x law.

    ``rho`` is one of a :class:`GridDensity` (deterministic: one Dirac per
    cell center, ensemble weight = cell mass; ``n`` must equal the cell
    count), a :class:`ParticleMeasure` (one Dirac at each particle, ensemble
    weight = particle weight; ``n`` must equal the particle count), or a
    callable sampler ``rho(rng, n) -> (n, d)`` drawing from a probability
    density (equal ensemble weights 1/n).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(rho, ParticleMeasure):
        if n != rho.num_points:
            raise ValueError(f"n={n} must equal the particle count {rho.num_points}")
        members = [(float(rho.weights[i]), ParticleMeasure(rho.points[i:i + 1], [1.0]))
                   for i in range(n)]
        return MeasureEnsemble(tuple(members))
    if isinstance(rho, GridDensity):
        n_cells = int(np.prod(rho.grid.cells))
        if n != n_cells:
            raise ValueError(f"n={n} must equal the grid cell count {n_cells}")
        masses = rho.values.ravel() * rho.grid.cell_volume
        if masses.sum() <= 0:
            raise ValueError("density has zero mass")
        centers = rho.grid.all_centers()
        members = [(float(masses[i]), ParticleMeasure(centers[i:i + 1], [1.0]))
                   for i in range(n_cells)]
        return MeasureEnsemble(tuple(members))
    gen = _as_rng(rng)
    pts = np.atleast_2d(np.asarray(rho(gen, n), dtype=float))
    if pts.shape[0] != n:
        raise ValueError("sampler returned wrong number of points")
    w = 1.0 / n
    members = [(w, ParticleMeasure(pts[i:i + 1], [1.0])) for i in range(n)]
    return MeasureEnsemble(tuple(members))


def product_ensemble(rho, gamma: ParticleMeasure, n: int, rng=None,
                     check_bounded: bool = True) -> MeasureEnsemble:
    """Ensemble of fiber products: x -> delta_x (x) gamma on R^{2m}.

    ``rho`` lives on the position factor R^m (GridDensity or sampler as in
    :func:`dirac_ensemble`); ``gamma`` is a probability measure on the
    momentum factor R^m.  Member j places gamma's particles in the fiber
    {x_j} x R^m.
    """
    if not gamma.is_probability(tol=1e-9):
        raise ValueError("gamma must be a probability measure")
    base = dirac_ensemble(rho, n, rng=rng)
    m = base.dim
    if gamma.dim != m:
        raise ValueError(
            f"dimension mismatch: position factor is R^{m}, "
            f"momentum factor is R^{gamma.dim}; the product must live on R^{2 * m}"
        )
    if check_bounded and gamma.num_points >= 1:
        wmax = float(gamma.weights.max())
        if wmax > 0.2 * gamma.total_mass and gamma.num_points > 1 or gamma.num_points == 1:
            warnings.warn(
                "gamma is strongly atomic; it is not bounded by a constant "
                "multiple of Lebesgue measure in the KDE sense",
                stacklevel=2,
            )
    members = []
    for w, delta in base.members:
        x = delta.points[0]
        pts = np.concatenate(
            [np.broadcast_to(x, (gamma.num_points, m)), gamma.points], axis=1
        )
        members.append((w, ParticleMeasure(pts, gamma.weights)))
    return MeasureEnsemble(tuple(members))


# ---------------------------------------------------------------------------
# Cloud factories
# ---------------------------------------------------------------------------

def uniform_cloud(box, n: int, rng=None, total_mass: float = 1.0) -> ParticleMeasure:
    """n uniform samples in an axis-aligned box, equal weights."""
    box = np.atleast_2d(np.asarray(box, dtype=float))
    gen = _as_rng(rng)
    pts = gen.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))
    return ParticleMeasure(pts, np.full(n, total_mass / n))


def grid_cloud(grid: GridSpec, total_mass: float = 1.0) -> ParticleMeasure:
    """Deterministic lattice cloud at cell centers with equal weights."""
    centers = grid.all_centers()
    n = centers.shape[0]
    return ParticleMeasure(centers, np.full(n, total_mass / n))


def particles_from_density(rho: GridDensity, threshold: float = 0.0) -> ParticleMeasure:
    """One particle per grid cell carrying the cell mass.

    Cells with mass below ``threshold`` times the largest cell mass are
    dropped; the remaining weights are rescaled so the total equals the
    density's integral.
    """
    masses = rho.values.ravel() * rho.grid.cell_volume
    total = masses.sum()
    if total <= 0:
        raise ValueError("density has zero mass")
    keep = masses >= threshold * masses.max()
    pts = rho.grid.all_centers()[keep]
    w = masses[keep]
    return ParticleMeasure(pts, w * (total / w.sum()))


# ---------------------------------------------------------------------------
# Smooth compactly supported test functions
# ---------------------------------------------------------------------------

def _bump_raw(u: np.ndarray) -> np.ndarray:
    """Bump profile for arguments already known to satisfy |u| < 1."""
    return np.exp(1.0 - 1.0 / (1.0 - u * u))


def _bump_deriv_raw(u: np.ndarray) -> np.ndarray:
    s = 1.0 - u * u
    return np.exp(1.0 - 1.0 / s) * (-2.0 * u / (s * s))


def _bump(u: np.ndarray) -> np.ndarray:
    """C-infinity bump profile on (-1, 1), sup value 1 at the origin."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = _bump_raw(u[inside])
    return out


def _bump_deriv(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = _bump_deriv_raw(u[inside])
    return out


def _ramp(u: np.ndarray) -> np.ndarray:
    """Odd profile u * bump(u); separates points the even bump cannot."""
    return np.asarray(u, dtype=float) * _bump(u)


def _ramp_deriv(u: np.ndarray) -> np.ndarray:
    return _bump(u) + np.asarray(u, dtype=float) * _bump_deriv(u)


def _profile_constants():
    grid = np.linspace(-1.0, 1.0, 2_000_001)
    ramp_sup = float(np.abs(_ramp(grid)).max()) * (1.0 + 1e-9)
    integral, _ = quad(lambda u: float(_bump(np.array([u]))[0]), -1.0, 1.0,
                       limit=200)
    return ramp_sup, float(integral)

RAMP_SUP, BUMP_INTEGRAL = _profile_constants()


@dataclass(frozen=True)
class BumpFunction:
    """Tensor-product bump on a box cell, optionally with one odd (ramp) axis.

    With u_a = (z_a - center_a) / halfwidth_a, the even kind evaluates
    prod_a bump(u_a); the ramp kind replaces the factor on ``ramp_axis`` by
    u * bump(u).  Both are C-infinity and vanish outside the open cell.
    """

    center: np.ndarray
    halfwidth: np.ndarray
    ramp_axis: int = -1      # -1 for the even kind

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).ravel()
        h = np.asarray(self.halfwidth, dtype=float).ravel()
        if c.shape != h.shape or np.any(h <= 0):
            raise ValueError("center/halfwidth mismatch or nonpositive halfwidth")
        if not -1 <= self.ramp_axis < c.shape[0]:
            raise ValueError("ramp_axis out of range")
        object.__setattr__(self, "center", _readonly(c))
        object.__setattr__(self, "halfwidth", _readonly(h))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def sup_bound(self) -> float:
        return RAMP_SUP if self.ramp_axis >= 0 else 1.0

    @property
    def support_box(self) -> np.ndarray:
        return np.stack([self.center - self.halfwidth,
                         self.center + self.halfwidth], axis=1)

    def lebesgue_integral(self) -> float:
        if self.ramp_axis >= 0:
            return 0.0
        return float(np.prod(self.halfwidth) * BUMP_INTEGRAL ** self.dim)

    def _support_mask(self, points: np.ndarray):
        # restricting to the open support cell keeps the transcendental work
        # proportional to the covered fraction of the cloud
        u = (points - self.center[None, :]) / self.halfwidth[None, :]
        inside = (np.abs(u) < 1.0).all(axis=1)
        return u[inside], inside

    def _axis_profiles(self, u: np.ndarray):
        profs = [_bump_raw(u[:, a]) for a in range(self.dim)]
        if self.ramp_axis >= 0:
            profs[self.ramp_axis] *= u[:, self.ramp_axis]
        return profs

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(points.shape[0])
        u, inside = self._support_mask(points)
        if u.shape[0]:
            profs = self._axis_profiles(u)
            val = profs[0]
            for p in profs[1:]:
                val = val * p
            out[inside] = val
        return out

    def gradient(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        grad = np.zeros((points.shape[0], self.dim))
        u, inside = self._support_mask(points)
        if u.shape[0]:
            profs = self._axis_profiles(u)
            derivs = [_bump_deriv_raw(u[:, a]) / self.halfwidth[a]
                      for a in range(self.dim)]
            if self.ramp_axis >= 0:
                a = self.ramp_axis
                derivs[a] = _ramp_deriv(u[:, a]) / self.halfwidth[a]
            block = np.empty((u.shape[0], self.dim))
            for a in range(self.dim):
                g = derivs[a].copy()
                for c in range(self.dim):
                    if c != a:
                        g *= profs[c]
                block[:, a] = g
            grad[inside] = block
        return grad


def bump_tables(functions, points: np.ndarray, weights: np.ndarray,
                field_values: np.ndarray = None):
    """Pairings of many test functions with one weighted cloud, in one pass.

    Returns the vector <mu, phi_k> over the given functions and, when
    ``field_values`` (the field at the cloud points) is supplied, also the
    vector <mu, <F, grad phi_k>>.  For collections of :class:`BumpFunction`
    the evaluation is grouped so per-axis profiles over shared centers are
    built once and combined by dense products; results agree with looping
    over the functions one by one.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.asarray(weights, dtype=float).ravel()
    K = len(functions)
    vals = np.zeros(K)
    grads = np.zeros(K) if field_values is not None else None
    if not all(isinstance(f, BumpFunction) for f in functions):
        for k, f in enumerate(functions):
            vals[k] = float(f(points) @ w)
            if grads is not None:
                g = f.gradient(points)
                grads[k] = float(np.einsum("nd,nd->n", field_values, g) @ w)
        return vals, grads

    d = points.shape[1]
    groups = {}
    for k, f in enumerate(functions):
        groups.setdefault((f.halfwidth.tobytes(), f.ramp_axis), []).append(k)

    base_cache = {}
    prof_cache = {}

    def axis_base(a, centers, hw):
        key = (a, centers.tobytes(), float(hw))
        got = base_cache.get(key)
        if got is None:
            u = (points[:, a, None] - centers[None, :]) / hw
            inside = np.abs(u) < 1.0
            ui = u[inside]
            got = (u.shape, inside, ui, _bump_raw(ui))
            base_cache[key] = got
        return got

    def axis_profile(a, centers, hw, kind):
        key = (a, centers.tobytes(), float(hw), kind)
        got = prof_cache.get(key)
        if got is None:
            shape, inside, ui, bv = axis_base(a, centers, hw)
            got = np.zeros(shape)
            if kind == "v":
                got[inside] = bv
            elif kind == "r":
                got[inside] = ui * bv
            elif kind == "dv":
                got[inside] = _bump_deriv_raw(ui) / hw
            else:   # "dr"
                got[inside] = (bv + ui * _bump_deriv_raw(ui)) / hw
            prof_cache[key] = got
        return got

    for (_, ramp_axis), idxs in groups.items():
        fs = [functions[k] for k in idxs]
        hw = fs[0].halfwidth
        C = np.stack([f.center for f in fs])
        axis_centers, axis_idx = [], []
        for a in range(d):
            ca, inv = np.unique(C[:, a], return_inverse=True)
            axis_centers.append(ca)
            axis_idx.append(inv)
        vkinds = ["r" if a == ramp_axis else "v" for a in range(d)]
        V = [axis_profile(a, axis_centers[a], hw[a], vkinds[a])
             for a in range(d)]
        if d == 2:
            i0, i1 = axis_idx
            T = (V[0] * w[:, None]).T @ V[1]
            vals[idxs] = T[i0, i1]
            if grads is not None:
                D = [axis_profile(a, axis_centers[a], hw[a],
                                  "dr" if a == ramp_axis else "dv")
                     for a in range(d)]
                G = (D[0] * (w * field_values[:, 0])[:, None]).T @ V[1] \
                    + (V[0] * (w * field_values[:, 1])[:, None]).T @ D[1]
                grads[idxs] = G[i0, i1]
        else:
            cols = V[0][:, axis_idx[0]].copy()
            for a in range(1, d):
                cols *= V[a][:, axis_idx[a]]
            vals[idxs] = w @ cols
            if grads is not None:
                D = [axis_profile(a, axis_centers[a], hw[a],
                                  "dr" if a == ramp_axis else "dv")
                     for a in range(d)]
                acc = np.zeros((points.shape[0], len(idxs)))
                for a in range(d):
                    term = D[a][:, axis_idx[a]].copy()
                    for c in range(d):
                        if c != a:
                            term *= V[c][:, axis_idx[c]]
                    acc += field_values[:, a, None] * term
                grads[idxs] = w @ acc
    return vals, grads


@dataclass(frozen=True)
class TestFunctionDictionary:
    """Ordered dictionary of bump test functions with declared sup norms.

    Function k contributes to :func:`weak_distance` with weight 2^-(k+1),
    so earlier (coarser) functions dominate and the metric is bounded by 1.
    """

    functions: tuple
    box: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.functions:
            raise ValueError("dictionary must be nonempty")
        dims = {f.dim for f in self.functions}
        if len(dims) != 1:
            raise ValueError("dictionary functions have inconsistent dims")
        if self.box is not None:
            object.__setattr__(self, "box",
                               _readonly(np.atleast_2d(np.asarray(self.box, float))))

    @property
    def dim(self) -> int:
        return self.functions[0].dim

    def __len__(self) -> int:
        return len(self.functions)

    @property
    def sup_bounds(self) -> np.ndarray:
        return np.array([f.sup_bound for f in self.functions])

    def integrals(self, mu: ParticleMeasure) -> np.ndarray:
        """Pairings of every dictionary function with ``mu``, in order.

        Results are cached per measure object (callers must not mutate the
        returned array), so repeated distances against the same cloud cost
        one evaluation.
        """
        if mu.dim != self.dim:
            raise ValueError(f"measure dim {mu.dim} != dictionary dim {self.dim}")
        cache = getattr(self, "_pairing_cache", None)
        if cache is None:
            cache = {}
            object.__setattr__(self, "_pairing_cache", cache)
        hit = cache.get(id(mu))
        if hit is not None and hit[0]() is mu:
            return hit[1]
        out = bump_tables(self.functions, mu.points, mu.weights)[0]
        if len(cache) > 8192:
            cache.clear()
        try:
            cache[id(mu)] = (weakref.ref(mu), out)
        except TypeError:
            pass
        return out

    def nonnegative_functions(self) -> tuple:
        """The even (sign-definite) members, for regularity-type statistics."""
        return tuple(f for f in self.functions if f.ramp_axis < 0)


def dyadic_dictionary(box, scales: int = 3, with_ramps: bool = True) -> TestFunctionDictionary:
    """Default dictionary: tensor bumps at dyadic scales, coarse to fine.

    Scale s places per-axis centers spaced (width / 2^(s+1)) with matching
    halfwidths, so adjacent cells overlap by half and every interior point of
    the box lies well inside some cell.  With ramps included, any two distinct
    interior points are separated by some dictionary function.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    d = box.shape[0]
    lo, hi = box[:, 0], box[:, 1]
    width = hi - lo
    funcs = []
    for s in range(scales):
        h = width / (2.0 ** (s + 1))
        n_centers = 2 ** (s + 1) - 1
        axis_centers = [lo[a] + h[a] * np.arange(1, n_centers + 1)
                        for a in range(d)]
        mesh = np.meshgrid(*axis_centers, indexing="ij")
        centers = np.stack([m.ravel() for m in mesh], axis=-1)
        for c in centers:
            funcs.append(BumpFunction(c, h))
            if with_ramps:
                for a in range(d):
                    funcs.append(BumpFunction(c, h, ramp_axis=a))
    return TestFunctionDictionary(tuple(funcs), box=box)


def weak_distance(mu: ParticleMeasure, nu: ParticleMeasure,
                  dictionary: TestFunctionDictionary) -> float:
    """Bounded dictionary pseudometric inducing weak convergence.

    Returns sum_k 2^-(k+1) * min(1, |<mu - nu, phi_k>| / sup(phi_k)).  The
    value lies in [0, 1), is symmetric, and satisfies the triangle inequality;
    the clipping keeps it bounded.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    diffs = np.abs(dictionary.integrals(mu) - dictionary.integrals(nu))
    diffs /= dictionary.sup_bounds
    clipped = np.minimum(1.0, diffs)
    k = np.arange(len(dictionary))
    return float(np.sum(np.ldexp(clipped, -(k + 1))))
