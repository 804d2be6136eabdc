"""Construction and advancement of space-like leaf families.

Four steering rules are supported: static equal-time planes, the tilted
equal-time planes of a boosted frame, a tabulated lapse profile (normal
displacement scaled per site), and the dynamic rule that displaces each
site by equal proper time d_eps along the time-like eigenvector of the
realized field's stress-energy tensor.

With displacement vector W at a site and old-leaf unit normal n, the step
geometry is

    N dt = d_eps cosh(theta),   cosh(theta) = eta(W, n) = 1/sqrt(1 - v^2)

and the label increment is chosen as dt = d_eps so the per-site lapse is
exactly cosh(theta) for unit W (and the tabulated value for the profile
rule, whose W = N n has eta(W, n) = N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FoliationCollapseError, GeometryError
from .geometry import Leaf, minkowski_dot
from .stress_energy import compute_stress_energy

__all__ = [
    "EQUAL_TIME",
    "BOOSTED",
    "LAPSE_PROFILE",
    "DYNAMIC",
    "FoliationStrategy",
    "flow_vectors",
    "step_lapse",
    "tangential_speed",
    "advance_leaf",
    "initial_leaf",
]

EQUAL_TIME = "equal_time"
BOOSTED = "boosted"
LAPSE_PROFILE = "lapse_profile"
DYNAMIC = "dynamic"

_KINDS = (EQUAL_TIME, BOOSTED, LAPSE_PROFILE, DYNAMIC)


@dataclass(frozen=True)
class FoliationStrategy:
    """How successive leaves are generated from the current one."""

    kind: str
    d_eps: float
    velocity: float = 0.0            # boosted only
    lapse_table: np.ndarray = None   # lapse_profile only, (n_rows, n_sites)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown foliation kind {self.kind!r}")
        if not self.d_eps > 0:
            raise ValueError("d_eps must be positive")
        if self.kind == BOOSTED and not -1.0 < self.velocity < 1.0:
            raise ValueError("boost velocity must satisfy |v| < 1")
        if self.kind == LAPSE_PROFILE:
            if self.lapse_table is None:
                raise ValueError("lapse_profile needs a lapse table")
            table = np.array(self.lapse_table, dtype=float)
            if table.ndim != 2 or np.any(table < 1.0):
                raise ValueError("lapse table must be 2d with values >= 1")
            table.flags.writeable = False
            object.__setattr__(self, "lapse_table", table)


def flow_vectors(strategy, leaf, phi, pi, mass, step_index=0):
    """Per-site displacement vectors for the next step of the foliation.

    Returns ``(flow, n_degenerate)``; flow rows are unit time-like for all
    rules except the lapse profile, whose rows are N_i times the normal.
    Degenerate stress-energy sites fall back to the leaf normal and are
    counted rather than raised.
    """
    n = leaf.n_sites
    if strategy.kind == EQUAL_TIME:
        return np.tile([1.0, 0.0], (n, 1)), 0
    if strategy.kind == BOOSTED:
        v = strategy.velocity
        gamma = 1.0 / np.sqrt(1.0 - v**2)
        return np.tile([gamma, gamma * v], (n, 1)), 0
    if strategy.kind == LAPSE_PROFILE:
        table = strategy.lapse_table
        row = table[min(step_index, table.shape[0] - 1)]
        if row.shape != (n,):
            raise ValueError("lapse table row length does not match the leaf")
        return row[:, None] * leaf.normals, 0
    field = compute_stress_energy(phi, pi, leaf, mass)
    return field.flow, field.n_degenerate


def step_lapse(leaf, flow):
    """Per-site lapse of a step along ``flow``: N_i = eta(flow_i, normal_i)."""
    return minkowski_dot(flow, leaf.normals)


def tangential_speed(leaf, flow):
    """Per-site 3-velocity of the displacement relative to the leaf normal."""
    normal_part = minkowski_dot(flow, leaf.normals)
    tangent_part = -minkowski_dot(flow, leaf.tangents)  # u.u = -1
    return tangent_part / normal_part


def advance_leaf(leaf, flow, d_eps):
    """Displace every site by d_eps * flow and build the successor leaf.

    The new leaf's label is t + d_eps (dt = d_eps by the lapse choice) and
    its lapse is reset to ones until its own step is known.

    Raises
    ------
    FoliationCollapseError
        If the displaced points are no longer space-like separated or the
        leaf folds back on itself (adjacent displacements crossing).
    """
    flow = np.asarray(flow, dtype=float)
    if flow.shape != (leaf.n_sites, 2):
        raise ValueError("flow must provide one (T, X) vector per site")
    new_points = leaf.points + d_eps * flow
    try:
        new_leaf = Leaf(label=leaf.label + d_eps, points=new_points, dx=leaf.dx,
                        period_vector=leaf.period_vector)
    except GeometryError as err:
        raise FoliationCollapseError(
            f"leaf at t = {leaf.label + d_eps:g} is not space-like: {err}",
            site=err.site,
        ) from err
    crossed = minkowski_dot(new_leaf.edge_vectors(), leaf.edge_vectors())
    bad = np.nonzero(crossed >= 0)[0]
    if bad.size:
        raise FoliationCollapseError(
            f"adjacent displacements cross between sites {bad[0]} and {bad[0] + 1}",
            site=int(bad[0]),
        )
    return new_leaf


def initial_leaf(strategy, n_sites, dx):
    """Starting leaf for a strategy: tilted for boosted, flat otherwise."""
    if strategy.kind == BOOSTED:
        return Leaf.boosted(n_sites, dx, strategy.velocity)
    return Leaf.equal_time(n_sites, dx)
