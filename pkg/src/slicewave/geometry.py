"""Space-like lattice leaves in 1+1 Minkowski space and their mode operator.

Conventions (used throughout the package):

* metric signature ``(+, -)``, units ``c = hbar = 1``;
* a leaf is a closed chain of embedding points ``(T_i, X_i)``, periodic in
  the site index ``i`` with a fixed comoving spacing ``dx``.  Periodicity is
  geometric: site ``i + n`` is identified with site ``i`` translated by the
  leaf's ``period_vector``, so tilted (boosted) leaves wrap consistently;
* the induced 1d spatial metric ``g_i > 0`` comes from central differences
  of the embedding (arc-length element of the leaf curve), and the surface
  volume element is ``mu_i = sqrt(g_i) * dx``.  All leaf integrals are
  ``sum_i mu_i f_i g_i`` style quadratures under this measure.

The mode operator is the spatial Klein-Gordon operator on the leaf,

    K phi = -(1/w) d/dx ( (1/w) d phi/dx ) + m^2 phi,      w = sqrt(g),

discretised in divergence form with fluxes on half-integer links.  That
choice makes K exactly self-adjoint under the mu-weighted inner product and
makes the discrete summation-by-parts identity hold to machine precision on
periodic lattices, not merely to truncation order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GeometryError, SingularOperatorError, SpectrumError

__all__ = [
    "MINKOWSKI",
    "Leaf",
    "ModeBasis",
    "FieldConfig",
    "minkowski_dot",
    "kinetic_operator",
    "spectral_sqrt",
    "inner",
    "summation_by_parts_residual",
]

#: Minkowski metric in (T, X) components, signature (+, -).
MINKOWSKI = np.diag([1.0, -1.0])

_LEAF_IDS = itertools.count(1)
_BASIS_IDS = itertools.count(1)


def minkowski_dot(a, b):
    """Minkowski inner product ``a^0 b^0 - a^1 b^1`` over the last axis."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 0] - a[..., 1] * b[..., 1]


def _frozen(arr):
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Leaf:
    """A discretised space-like hypersurface.

    Parameters
    ----------
    label : float
        Scalar foliation parameter t.  A label only; proper time enters
        through the lapse.
    points : ndarray, shape (n, 2)
        Embedding points, rows ``(T_i, X_i)``.
    dx : float
        Comoving coordinate spacing between adjacent sites.
    period_vector : ndarray, shape (2,)
        Minkowski translation identifying site ``i + n`` with site ``i``.
    lapse : ndarray, shape (n,)
        Per-site proper-time rate N_i > 0 between this leaf and its
        successor.  Ones for a freshly constructed leaf; the run loop
        replaces it once the next displacement is known.
    """

    label: float
    points: np.ndarray
    dx: float
    period_vector: np.ndarray
    lapse: np.ndarray = None
    leaf_id: int = None
    # derived geometry, filled in __post_init__
    tangents: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)
    induced_metric: np.ndarray = field(init=False, repr=False)
    measure: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        points = _frozen(self.points)
        if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 3:
            raise GeometryError("leaf needs at least 3 embedding points of shape (n, 2)")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "period_vector", _frozen(self.period_vector))
        if self.dx <= 0:
            raise GeometryError("dx must be positive")
        n = points.shape[0]

        lapse = np.ones(n) if self.lapse is None else np.asarray(self.lapse, dtype=float)
        if lapse.shape != (n,) or np.any(lapse <= 0):
            raise GeometryError("lapse must be positive, one value per site")
        object.__setattr__(self, "lapse", _frozen(lapse))
        if self.leaf_id is None:
            object.__setattr__(self, "leaf_id", next(_LEAF_IDS))

        edges = self.edge_vectors()
        intervals = minkowski_dot(edges, edges)
        bad = np.nonzero(intervals >= 0)[0]
        if bad.size:
            raise GeometryError(
                f"adjacent sites {bad[0]} and {bad[0] + 1} are not space-like separated",
                site=int(bad[0]),
            )

        nxt = np.roll(points, -1, axis=0).copy()
        nxt[-1] += self.period_vector
        prv = np.roll(points, 1, axis=0).copy()
        prv[0] -= self.period_vector
        deriv = (nxt - prv) / (2.0 * self.dx)  # d(T, X)/dx, central
        g = deriv[:, 1] ** 2 - deriv[:, 0] ** 2
        bad = np.nonzero(g <= 0)[0]
        if bad.size:
            raise GeometryError(
                f"induced metric not positive at site {bad[0]}", site=int(bad[0])
            )
        tangents = deriv / np.sqrt(g)[:, None]  # unit space-like, u.u = -1
        normals = tangents[:, ::-1].copy()      # (u^X, u^T): unit time-like
        normals *= np.sign(normals[:, :1])      # future-pointing
        object.__setattr__(self, "tangents", _frozen(tangents))
        object.__setattr__(self, "normals", _frozen(normals))
        object.__setattr__(self, "induced_metric", _frozen(g))
        object.__setattr__(self, "measure", _frozen(np.sqrt(g) * self.dx))

    # -- constructors ---------------------------------------------------

    @classmethod
    def equal_time(cls, n_sites, dx, label=0.0, time=0.0):
        """Flat equal-time leaf T = time, sites at X_i = i*dx."""
        x = np.arange(n_sites) * dx
        points = np.column_stack([np.full(n_sites, float(time)), x])
        return cls(label=label, points=points, dx=dx,
                   period_vector=np.array([0.0, n_sites * dx]))

    @classmethod
    def boosted(cls, n_sites, dx, velocity, label=0.0):
        """Equal-time leaf of the frame moving at ``velocity``.

        In lab coordinates the leaf is tilted: points lie along the unit
        space-like direction gamma*(v, 1) through the origin.
        """
        if not -1.0 < velocity < 1.0:
            raise GeometryError("|velocity| must be < 1")
        gamma = 1.0 / np.sqrt(1.0 - velocity**2)
        direction = gamma * np.array([velocity, 1.0])
        s = np.arange(n_sites) * dx
        return cls(label=label, points=s[:, None] * direction[None, :], dx=dx,
                   period_vector=n_sites * dx * direction)

    # -- geometry helpers -----------------------------------------------

    @property
    def n_sites(self):
        return self.points.shape[0]

    def edge_vectors(self):
        """Displacement from site i to site i+1 (periodic wrap included)."""
        nxt = np.roll(self.points, -1, axis=0).copy()
        nxt[-1] += self.period_vector
        return nxt - self.points

    def with_lapse(self, lapse):
        """Copy of this leaf with the per-site lapse replaced (same identity)."""
        return replace(self, lapse=np.asarray(lapse, dtype=float), leaf_id=self.leaf_id)

    def same_intrinsic_geometry(self, other):
        """True when measure, metric and spacing coincide bitwise.

        Equal intrinsic data gives a bitwise-identical mode operator, so a
        basis built on ``other`` remains valid here.
        """
        return (
            self.n_sites == other.n_sites
            and self.dx == other.dx
            and np.array_equal(self.induced_metric, other.induced_metric)
        )


@dataclass(frozen=True)
class ModeBasis:
    """Eigenpairs of the square-rooted mode operator on one leaf.

    ``frequencies[k]`` and ``modes[k]`` satisfy K^(1/2) modes[k] =
    frequencies[k] * modes[k]; the rows are orthonormal under the leaf
    measure: sum_i mu_i modes[k, i] modes[l, i] = delta_kl.
    """

    frequencies: np.ndarray        # ascending, shape (n,)
    modes: np.ndarray              # shape (n_modes, n_sites), row per mode
    measure: np.ndarray            # copy of the leaf measure mu_i
    leaf_id: int
    basis_id: int = None

    def __post_init__(self):
        object.__setattr__(self, "frequencies", _frozen(self.frequencies))
        object.__setattr__(self, "modes", _frozen(self.modes))
        object.__setattr__(self, "measure", _frozen(self.measure))
        if self.basis_id is None:
            object.__setattr__(self, "basis_id", next(_BASIS_IDS))

    @classmethod
    def synthetic(cls, frequencies):
        """Basis with prescribed frequencies on a unit-measure lattice.

        Modes are the coordinate unit vectors (orthonormal under mu = 1),
        so mode coordinates and site values coincide.  Handy for exercising
        functional algebra at chosen frequencies without building a leaf.
        """
        frequencies = np.asarray(frequencies, dtype=float)
        n = frequencies.shape[0]
        return cls(frequencies=np.sort(frequencies), modes=np.eye(n),
                   measure=np.ones(n), leaf_id=0)

    @property
    def n_modes(self):
        return self.frequencies.shape[0]

    @property
    def n_sites(self):
        return self.modes.shape[1]

    def analyze(self, site_values):
        """Mode coordinates of a site-space field (mu-weighted projection)."""
        site_values = np.asarray(site_values)
        return self.modes @ (self.measure * site_values)

    def synthesize(self, mode_coords):
        """Site-space field from mode coordinates."""
        return np.asarray(mode_coords) @ self.modes

    def apply_sqrt(self, site_values):
        """Apply K^(1/2) to a site-space field via the spectral form."""
        return (self.frequencies * self.analyze(site_values)) @ self.modes

    def sqrt_matrix(self):
        """Dense K^(1/2) as a site-space matrix."""
        return (self.modes.T * self.frequencies) @ (self.modes * self.measure)


@dataclass(frozen=True)
class FieldConfig:
    """A real field configuration on a leaf, in site and mode coordinates."""

    site_values: np.ndarray
    mode_coords: np.ndarray
    basis_id: int

    def __post_init__(self):
        object.__setattr__(self, "site_values", _frozen(self.site_values))
        object.__setattr__(self, "mode_coords", _frozen(self.mode_coords))

    @classmethod
    def from_sites(cls, site_values, basis):
        site_values = np.asarray(site_values, dtype=float)
        if site_values.shape != (basis.n_sites,):
            raise ValueError("site_values shape does not match the basis")
        return cls(site_values, basis.analyze(site_values), basis.basis_id)

    @classmethod
    def from_modes(cls, mode_coords, basis):
        mode_coords = np.asarray(mode_coords, dtype=float)
        if mode_coords.shape != (basis.n_modes,):
            raise ValueError("mode_coords shape does not match the basis")
        return cls(basis.synthesize(mode_coords), mode_coords, basis.basis_id)


def _half_link_weights(leaf):
    """1/w on half-integer links, w = sqrt(g) averaged between neighbours."""
    w = np.sqrt(leaf.induced_metric)
    w_next = np.roll(w, -1)
    return 2.0 / (w + w_next)       # a_{i+1/2}


def kinetic_operator(leaf, mass):
    """Dense matrix of K phi = -(1/w) d((1/w) d phi) + m^2 phi on the leaf.

    Self-adjoint with respect to the mu-weighted inner product by
    construction; spectrum bounded below by m^2.

    Raises
    ------
    SingularOperatorError
        If ``mass <= 0``: the periodic lattice always carries a constant
        zero mode, which would make K^(1/2) non-invertible.
    """
    if mass <= 0:
        raise SingularOperatorError(
            "mass must be positive: the constant mode makes K singular at m = 0"
        )
    n = leaf.n_sites
    w = np.sqrt(leaf.induced_metric)
    a = _half_link_weights(leaf)            # link i -> i+1
    a_prev = np.roll(a, 1)                  # link i-1 -> i
    scale = 1.0 / (w * leaf.dx**2)

    k = np.zeros((n, n))
    idx = np.arange(n)
    k[idx, idx] = scale * (a + a_prev) + mass**2
    k[idx, (idx + 1) % n] -= scale * a
    k[idx, (idx - 1) % n] -= scale * a_prev
    return k


def spectral_sqrt(k, leaf):
    """Square root of the mode operator and its eigenbasis.

    Symmetrises K with the measure similarity transform
    S = D^(1/2) K D^(-1/2), D = diag(mu), eigendecomposes S and maps the
    orthonormal eigenvectors back to mu-orthonormal modes.

    Returns
    -------
    (sqrt_k, basis) : (ndarray, ModeBasis)
        Dense K^(1/2) matrix and the mode basis with ascending frequencies.

    Raises
    ------
    SpectrumError
        If an eigenvalue lies below -1e-12.
    """
    k = np.asarray(k, dtype=float)
    n = leaf.n_sites
    if k.shape != (n, n):
        raise ValueError("operator shape does not match the leaf")
    root_mu = np.sqrt(leaf.measure)
    sym = k * (root_mu[:, None] / root_mu[None, :])
    sym = 0.5 * (sym + sym.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals[0] < -1e-12:
        raise SpectrumError(f"negative eigenvalue {eigvals[0]:.3e} in mode operator")
    eigvals = np.clip(eigvals, 0.0, None)
    freqs = np.sqrt(eigvals)
    modes = eigvecs.T / root_mu[None, :]
    basis = ModeBasis(frequencies=freqs, modes=modes, measure=leaf.measure,
                      leaf_id=leaf.leaf_id)
    return basis.sqrt_matrix(), basis


def inner(f, g, leaf):
    """Leaf-measure inner product sum_i mu_i f_i g_i."""
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape != (leaf.n_sites,) or g.shape != (leaf.n_sites,):
        raise ValueError("fields must have one value per leaf site")
    return np.sum(leaf.measure * f * g)


def summation_by_parts_residual(phi, leaf):
    """Defect of the discrete integration-by-parts identity on the leaf.

    Computes | E_grad(phi) + <phi, (1/w) d((1/w) d phi)>_mu | where the
    gradient energy E_grad = sum over links of (dphi)^2 / (w_link dx) is
    accumulated directly from field differences, while the divergence form
    goes through the assembled operator matrix.  Zero to machine precision
    on periodic lattices for the divergence-form stencil.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (leaf.n_sites,):
        raise ValueError("field must have one value per leaf site")
    a = _half_link_weights(leaf)
    dphi = np.roll(phi, -1) - phi
    grad_form = np.sum(a * dphi**2) / leaf.dx
    # divergence form = (m^2 - K) phi for any mass; use m = 1 and subtract
    k = kinetic_operator(leaf, 1.0)
    div_form = inner(phi, phi - k @ phi, leaf)
    return abs(grad_form + div_form)
