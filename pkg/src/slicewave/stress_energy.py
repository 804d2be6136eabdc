"""Canonical stress-energy of the realized field and its time-like flow.

On a leaf the field data are the site values phi, the normal derivative
pi = n^mu d_mu phi, and the tangential derivative sigma = dphi/ds along the
leaf curve (central differences over arc length).  The Minkowski gradient
reconstructs as

    d^mu phi = pi n^mu - sigma u^mu

with n, u the unit normal/tangent, and the canonical tensor is

    T_mn = d_m phi d_n phi - eta_mn L,    L = (pi^2 - sigma^2 - m^2 phi^2)/2

so the energy density seen by the leaf observer is
rho = n T n = (pi^2 + sigma^2 + m^2 phi^2)/2.

The flow direction used to steer dynamic foliations is the unit time-like
eigenvector of T^m_n, solved in closed form for the 2x2 case; it fails to
exist exactly when the flux is light-like (|d_T phi| = |d_X phi|), which is
reported per site rather than hidden.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFlowError
from .geometry import MINKOWSKI, minkowski_dot

__all__ = [
    "StressEnergyField",
    "compute_stress_energy",
    "timelike_eigenvector",
    "boost_matrix",
]

#: |W.W| below this (on a unit-Euclidean-norm candidate) counts as null.
CLASSIFY_TOL = 1e-10


def boost_matrix(velocity):
    """Lorentz boost matrix for contravariant (T, X) components."""
    gamma = 1.0 / np.sqrt(1.0 - velocity**2)
    return np.array([[gamma, gamma * velocity], [gamma * velocity, gamma]])


@dataclass(frozen=True)
class StressEnergyField:
    """Per-site stress-energy data of the realized field on a leaf."""

    tensors: np.ndarray          # (n, 2, 2) T_mn, lower Minkowski indices
    flow: np.ndarray             # (n, 2) unit time-like eigenvector, future
    energy_density: np.ndarray   # (n,) rho = n T n
    degenerate: np.ndarray       # (n,) bool, True where flux is light-like

    @property
    def n_degenerate(self):
        return int(np.count_nonzero(self.degenerate))


def _eigenvector_candidates(mixed):
    """Eigenvalues and (unnormalised) eigenvectors of a real 2x2 matrix."""
    a, b = mixed[0, 0], mixed[0, 1]
    c, d = mixed[1, 0], mixed[1, 1]
    tr = a + d
    disc = (a - d) ** 2 + 4.0 * b * c
    if disc < 0.0:
        return None
    root = np.sqrt(disc)
    out = []
    for lam in ((tr + root) / 2.0, (tr - root) / 2.0):
        vec = np.array([b, lam - a])
        if np.max(np.abs(vec)) < 1e-14 * max(1.0, abs(lam)):
            vec = np.array([lam - d, c])
        if np.max(np.abs(vec)) < 1e-14 * max(1.0, abs(lam)):
            vec = np.array([1.0, 0.0])  # isotropic: every direction is eigen
        out.append((lam, vec))
    return out


def timelike_eigenvector(tensor):
    """Unit future-pointing time-like eigenvector of a symmetric T_mn.

    Solves T^m_n W^n = lambda W^m with the index raised by the Minkowski
    metric, in closed form.  For an isotropic tensor (T^m_n proportional to
    the identity) every direction is an eigenvector and (1, 0) is returned.

    Raises
    ------
    DegenerateFlowError
        If both eigenvectors are null or space-like (light-like flux).
    """
    tensor = np.asarray(tensor, dtype=float)
    mixed = MINKOWSKI @ tensor        # T^m_n
    candidates = _eigenvector_candidates(mixed)
    if candidates is not None:
        for _, vec in candidates:
            norm = np.hypot(vec[0], vec[1])
            if norm == 0.0:
                continue
            unit = vec / norm
            interval = minkowski_dot(unit, unit)
            if interval > CLASSIFY_TOL:
                w = unit / np.sqrt(interval)
                return w if w[0] > 0 else -w
    raise DegenerateFlowError("stress-energy flux is light-like: no time-like eigenvector")


def compute_stress_energy(phi, pi, leaf, mass):
    """Canonical T_mn, flow eigenvector and energy density of field data.

    ``pi`` is the normal derivative n^mu d_mu phi.  At sites where the
    time-like eigenvector does not exist (light-like flux) the flow falls
    back to the leaf normal and the site is flagged in ``degenerate``.
    """
    phi = np.asarray(phi, dtype=float)
    pi = np.asarray(pi, dtype=float)
    n = leaf.n_sites
    if phi.shape != (n,) or pi.shape != (n,):
        raise ValueError("phi and pi must have one value per leaf site")

    nxt = np.roll(phi, -1)
    prv = np.roll(phi, 1)
    sigma = (nxt - prv) / (2.0 * leaf.dx * np.sqrt(leaf.induced_metric))

    # d_mu phi with lower indices: pi n_mu - sigma u_mu
    n_low = leaf.normals * np.array([1.0, -1.0])
    u_low = leaf.tangents * np.array([1.0, -1.0])
    grad = pi[:, None] * n_low - sigma[:, None] * u_low

    lagrangian = 0.5 * (pi**2 - sigma**2 - mass**2 * phi**2)
    tensors = grad[:, :, None] * grad[:, None, :] - lagrangian[:, None, None] * MINKOWSKI
    rho = 0.5 * (pi**2 + sigma**2 + mass**2 * phi**2)

    # Zero gradient makes T proportional to the metric; every direction is
    # then an eigenvector and the leaf normal is the continuum-limit choice.
    grad_sq = pi**2 + sigma**2
    isotropic = grad_sq <= 1e-28 * np.maximum(1.0, mass**2 * phi**2)

    flow = np.empty((n, 2))
    degenerate = np.zeros(n, dtype=bool)
    for i in range(n):
        if isotropic[i]:
            flow[i] = leaf.normals[i]
            continue
        try:
            flow[i] = timelike_eigenvector(tensors[i])
        except DegenerateFlowError:
            flow[i] = leaf.normals[i]
            degenerate[i] = True
    return StressEnergyField(tensors=tensors, flow=flow, energy_density=rho,
                             degenerate=degenerate)
