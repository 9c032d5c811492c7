"""Hamiltonian phase-space vector fields b(x, p) = (p, c(x)) with singular sets.

The force c is minus the gradient of a potential assembled from up to three
parts: a repulsive Coulomb part k / dist(x, S) singular on a set S, a bounded
Lipschitz part with machine-checkable sup / Lipschitz declarations, and a
smooth unbounded part (free or harmonic) for the benchmark families.
Supported singular sets are finite point sets and affine subspaces, both with
exact distance formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "SingularSet",
    "PhaseSpaceField",
    "Potential",
    "CoulombPart",
    "BoundedPart",
    "SmoothPart",
    "eval_field",
    "coulomb_force",
    "dist_to_singular",
    "decay_integrand",
    "make_field",
    "make_potential",
    "field_from_potential",
    "free_field",
    "harmonic_field",
    "coulomb_field",
]


def _rows(x, dim=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"expected points in R^{dim}, got dim {x.shape[1]}")
    return x


# ---------------------------------------------------------------------------
# Singular sets with exact distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SingularSet:
    """Closed negligible set: empty, a finite point set, or an affine subspace.

    ``points`` is (k, n) for the finite kind.  The affine kind is
    {origin + span(basis)} with ``basis`` an (n, r) matrix whose columns are
    orthonormalized on construction.
    """

    kind: str                       # "empty" | "points" | "affine"
    points: np.ndarray = None
    origin: np.ndarray = None
    basis: np.ndarray = None

    def __post_init__(self):
        if self.kind == "points":
            pts = np.atleast_2d(np.asarray(self.points, dtype=float))
            object.__setattr__(self, "points", pts)
        elif self.kind == "affine":
            origin = np.asarray(self.origin, dtype=float).ravel()
            basis = np.asarray(self.basis, dtype=float)
            if basis.ndim == 1:
                basis = basis[:, None]
            q, _ = np.linalg.qr(basis)
            object.__setattr__(self, "origin", origin)
            object.__setattr__(self, "basis", q)
        elif self.kind != "empty":
            raise ValueError(f"unknown singular set kind: {self.kind}")

    @staticmethod
    def empty() -> "SingularSet":
        return SingularSet("empty")

    @staticmethod
    def finite(points) -> "SingularSet":
        return SingularSet("points", points=points)

    @staticmethod
    def affine(origin, basis) -> "SingularSet":
        return SingularSet("affine", origin=origin, basis=basis)

    @property
    def is_empty(self) -> bool:
        return self.kind == "empty"

    def distance(self, x) -> np.ndarray:
        """Exact Euclidean distance from each row of x to the set."""
        x = _rows(x)
        if self.kind == "empty":
            return np.full(x.shape[0], np.inf)
        if self.kind == "points":
            return cdist(x, self.points).min(axis=1)
        v = x - self.origin[None, :]
        proj = v @ self.basis @ self.basis.T
        return np.linalg.norm(v - proj, axis=1)

    def nearest(self, x) -> np.ndarray:
        """Nearest point of the set to each row of x."""
        x = _rows(x)
        if self.kind == "empty":
            raise ValueError("empty set has no nearest point")
        if self.kind == "points":
            idx = cdist(x, self.points).argmin(axis=1)
            return self.points[idx]
        v = x - self.origin[None, :]
        return self.origin[None, :] + v @ self.basis @ self.basis.T


def dist_to_singular(s: SingularSet, x) -> np.ndarray:
    """Distance to the singular set; +inf when the set is empty."""
    return s.distance(x)


def decay_integrand(x, beta: float, delta: float, s: SingularSet) -> np.ndarray:
    """Penalty 1 / (dist^beta(x, S) + delta) probing concentration near S.

    Requires beta > 1 and delta > 0; evaluates to 0 when S is empty (the
    distance is +inf by convention).
    """
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    if delta <= 0:
        raise ValueError("delta must be positive")
    d = s.distance(x)
    out = np.zeros_like(d)
    finite = np.isfinite(d)
    out[finite] = 1.0 / (d[finite] ** beta + delta)
    return out


# ---------------------------------------------------------------------------
# Potential parts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoulombPart:
    """Repulsive part k / dist(x, S), k > 0, singular exactly on S."""

    k: float
    singular_set: SingularSet

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("Coulomb strength k must be positive")
        if self.singular_set.is_empty:
            raise ValueError("Coulomb part needs a nonempty singular set")

    def value(self, x) -> np.ndarray:
        d = self.singular_set.distance(x)
        return self.k / d

    def gradient(self, x) -> np.ndarray:
        x = _rows(x)
        d = self.singular_set.distance(x)
        direction = x - self.singular_set.nearest(x)
        return -self.k * direction / (d ** 3)[:, None]


@dataclass(frozen=True)
class BoundedPart:
    """Bounded Lipschitz interaction term with declared sup and Lipschitz bounds.

    Families: ``zero``; ``cosine`` with U = a * sum_i cos(omega x_i); and
    ``smoothed_abs`` with U = a * g / (1 + g / r_sat), g = sqrt(|x|^2+s^2)-s,
    a smoothed radial kink saturating at a * r_sat.
    """

    family: str
    a: float = 0.0
    omega: float = 1.0
    smoothing: float = 0.1
    r_sat: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.family not in ("zero", "cosine", "smoothed_abs"):
            raise ValueError(f"unknown bounded family: {self.family}")

    @property
    def sup_norm(self) -> float:
        if self.family == "zero":
            return 0.0
        if self.family == "cosine":
            return self.a * self.dim
        return self.a * self.r_sat

    @property
    def lipschitz(self) -> float:
        if self.family == "zero":
            return 0.0
        if self.family == "cosine":
            return self.a * self.omega * np.sqrt(self.dim)
        return self.a

    def value(self, x) -> np.ndarray:
        x = _rows(x, self.dim)
        if self.family == "zero":
            return np.zeros(x.shape[0])
        if self.family == "cosine":
            return self.a * np.cos(self.omega * x).sum(axis=1)
        g = np.sqrt(np.einsum("nd,nd->n", x, x) + self.smoothing ** 2) - self.smoothing
        return self.a * g / (1.0 + g / self.r_sat)

    def gradient(self, x) -> np.ndarray:
        x = _rows(x, self.dim)
        if self.family == "zero":
            return np.zeros_like(x)
        if self.family == "cosine":
            return -self.a * self.omega * np.sin(self.omega * x)
        root = np.sqrt(np.einsum("nd,nd->n", x, x) + self.smoothing ** 2)
        g = root - self.smoothing
        scale = self.a / (1.0 + g / self.r_sat) ** 2
        return (scale / root)[:, None] * x


@dataclass(frozen=True)
class SmoothPart:
    """Smooth confining part: zero (free flight) or harmonic omega^2 |x|^2 / 2."""

    family: str
    omega: float = 1.0

    def __post_init__(self):
        if self.family not in ("zero", "harmonic"):
            raise ValueError(f"unknown smooth family: {self.family}")

    def value(self, x) -> np.ndarray:
        x = _rows(x)
        if self.family == "zero":
            return np.zeros(x.shape[0])
        return 0.5 * self.omega ** 2 * np.einsum("nd,nd->n", x, x)

    def gradient(self, x) -> np.ndarray:
        x = _rows(x)
        if self.family == "zero":
            return np.zeros_like(x)
        return self.omega ** 2 * x

    def force_sup_on(self, box: np.ndarray) -> float:
        if self.family == "zero":
            return 0.0
        corner = np.max(np.abs(box), axis=1)
        return self.omega ** 2 * float(np.linalg.norm(corner))


@dataclass(frozen=True)
class Potential:
    """Sum of optional Coulomb, bounded Lipschitz, and smooth parts."""

    dim: int
    coulomb: CoulombPart = None
    bounded: BoundedPart = None
    smooth: SmoothPart = None

    @property
    def singular_set(self) -> SingularSet:
        if self.coulomb is not None:
            return self.coulomb.singular_set
        return SingularSet.empty()

    def parts(self):
        return [p for p in (self.coulomb, self.bounded, self.smooth) if p is not None]

    def value(self, x) -> np.ndarray:
        x = _rows(x, self.dim)
        out = np.zeros(x.shape[0])
        for p in self.parts():
            out += p.value(x)
        return out

    def gradient(self, x) -> np.ndarray:
        x = _rows(x, self.dim)
        out = np.zeros_like(x)
        for p in self.parts():
            out += p.gradient(x)
        return out

    def clamped_value(self, x, r_clamp: float) -> np.ndarray:
        """Potential with the Coulomb distance floored at ``r_clamp``.

        Used on spatial grids, where the exact Coulomb value is unbounded.
        """
        x = _rows(x, self.dim)
        out = np.zeros(x.shape[0])
        for p in self.parts():
            if isinstance(p, CoulombPart):
                d = np.maximum(p.singular_set.distance(x), r_clamp)
                out += p.k / d
            else:
                out += p.value(x)
        return out


def coulomb_force(x, k: float, s: SingularSet) -> np.ndarray:
    """Repulsive Coulomb force -grad(k / dist(x, S)).

    For point centers this is k (x - nearest) / dist^3, which always points
    away from the nearest singular point.
    """
    if k <= 0:
        raise ValueError("Coulomb strength k must be positive")
    x = _rows(x)
    d = s.distance(x)
    if np.any(d == 0):
        idx = int(np.argmax(d == 0))
        raise ValueError(f"Coulomb force undefined on the singular set (point {idx})")
    direction = x - s.nearest(x)
    return k * direction / (d ** 3)[:, None]


# ---------------------------------------------------------------------------
# Phase-space field
# ---------------------------------------------------------------------------

DEFAULT_REFERENCE_BOX_HALFWIDTH = 10.0


@dataclass(frozen=True)
class PhaseSpaceField:
    """Autonomous field b(x, p) = (p, c(x)) on R^{2n}.

    ``local_bound(r)`` bounds sup |c| on {dist(., S) >= r} intersected with
    the reference box (sup over all of R^n would be infinite for confining
    forces); it is nonincreasing in r and finite for r > 0.
    """

    n: int
    potential: Potential
    reference_box: np.ndarray = None
    name: str = "field"

    def __post_init__(self):
        if self.potential.dim != self.n:
            raise ValueError("potential dimension != field spatial dimension")
        box = self.reference_box
        if box is None:
            h = DEFAULT_REFERENCE_BOX_HALFWIDTH
            box = np.array([[-h, h]] * self.n)
        box = np.atleast_2d(np.asarray(box, dtype=float))
        object.__setattr__(self, "reference_box", box)

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def singular_set(self) -> SingularSet:
        return self.potential.singular_set

    def c(self, x) -> np.ndarray:
        """Force map c = -grad U on the position factor."""
        return -self.potential.gradient(x)

    def local_bound(self, r: float) -> float:
        if r <= 0:
            raise ValueError("r must be positive")
        bound = 0.0
        pot = self.potential
        if pot.coulomb is not None:
            bound += pot.coulomb.k / (r * r)
        if pot.bounded is not None:
            bound += pot.bounded.lipschitz
        if pot.smooth is not None:
            bound += pot.smooth.force_sup_on(self.reference_box)
        return bound

    def __call__(self, z) -> np.ndarray:
        return eval_field(self, z)


def eval_field(b: PhaseSpaceField, z) -> np.ndarray:
    """Evaluate (p, c(x)) at phase points z = (x, p); rows of shape 2n.

    Raises if any position component lies exactly on the singular set.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z2 = _rows(z, b.dim)
    x, p = z2[:, :b.n], z2[:, b.n:]
    d = b.singular_set.distance(x)
    if np.any(d == 0):
        idx = int(np.argmax(d == 0))
        raise ValueError(f"field evaluated on the singular set (point {idx})")
    out = np.concatenate([p, b.c(x)], axis=1)
    if not np.all(np.isfinite(out)):
        idx = int(np.argmax(~np.all(np.isfinite(out), axis=1)))
        raise ValueError(f"non-finite field value at point {idx}: z = {z2[idx]}")
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Constructors from config-style specs
# ---------------------------------------------------------------------------

def _bounded_from_spec(spec: dict, dim: int) -> BoundedPart:
    fam = spec.get("family", "zero")
    return BoundedPart(
        family=fam,
        a=float(spec.get("a", 0.0)),
        omega=float(spec.get("omega", 1.0)),
        smoothing=float(spec.get("smoothing", 0.1)),
        r_sat=float(spec.get("r_sat", 1.0)),
        dim=dim,
    )


def make_potential(spec: dict) -> Potential:
    """Build a potential from a named-family spec dictionary.

    Families: ``free``, ``harmonic`` (param omega), ``coulomb`` (params k,
    centers, optional ub sub-spec for the bounded part).
    """
    family = spec.get("family")
    n = int(spec.get("n", 1))
    if family == "free":
        return Potential(dim=n, smooth=SmoothPart("zero"))
    if family == "harmonic":
        return Potential(dim=n, smooth=SmoothPart("harmonic",
                                                  omega=float(spec.get("omega", 1.0))))
    if family == "coulomb":
        centers = np.atleast_2d(np.asarray(spec.get("centers", [[0.0] * n]), float))
        if centers.shape[1] != n:
            raise ValueError("Coulomb centers must have dimension n")
        coulomb = CoulombPart(k=float(spec.get("k", 1.0)),
                              singular_set=SingularSet.finite(centers))
        bounded = None
        if "ub" in spec and spec["ub"] is not None:
            bounded = _bounded_from_spec(spec["ub"], n)
        return Potential(dim=n, coulomb=coulomb, bounded=bounded)
    raise ValueError(f"unknown field family: {family!r}")


def field_from_potential(pot: Potential, reference_box=None,
                         name: str = "field") -> PhaseSpaceField:
    return PhaseSpaceField(n=pot.dim, potential=pot,
                           reference_box=reference_box, name=name)


def make_field(spec: dict, reference_box=None) -> PhaseSpaceField:
    """Phase-space field for a named potential family; see :func:`make_potential`."""
    pot = make_potential(spec)
    return field_from_potential(pot, reference_box=reference_box,
                                name=str(spec.get("family")))


def free_field(n: int = 1) -> PhaseSpaceField:
    return make_field({"family": "free", "n": n})


def harmonic_field(omega: float = 1.0, n: int = 1) -> PhaseSpaceField:
    return make_field({"family": "harmonic", "omega": omega, "n": n})


def coulomb_field(k: float = 1.0, n: int = 1, centers=None, ub=None) -> PhaseSpaceField:
    spec = {"family": "coulomb", "k": k, "n": n}
    if centers is not None:
        spec["centers"] = centers
    if ub is not None:
        spec["ub"] = ub
    return make_field(spec)
