"""Integration of the realized field along the foliation parameter.

The field obeys (1/N) dphi/dt = Im[(1/Psi) dPsi/dphi_g], so the per-label
velocity is the lapse times the imaginary part of the guidance ratio.  The
K^(1/2) phi part of the ratio is real for real fields and drops under Im;
only the polynomial part of the functional moves the field.

The stepper is classical fixed-step RK4 with the wave functional re-evolved
to each internal stage time, and the superposition coefficients entering
the ratio are always recomputed from the current stage field (the dynamics
is self-consistent in the field).  Near nodes the step is bisected; after
``max_bisections`` halvings the stepper aborts with a diagnostic error
instead of silently blowing up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NodeError, StepUnderflowError
from .functionals import NODE_THRESHOLD, evolve_stationary, guidance_ratio, mode_ratio_parts
from .geometry import FieldConfig

__all__ = [
    "TrajectoryState",
    "velocity",
    "momentum",
    "step_rk4",
    "integrate_mode_coords",
]

@dataclass(frozen=True)
class TrajectoryState:
    """Realized field on a leaf, with the last computed velocity cached."""

    leaf_label: float
    field: FieldConfig
    velocity_cache: np.ndarray = None


class _NodeProximity(Exception):
    """Internal: |Psi| dropped too far below its leaf-start value."""


def momentum(state, phi, basis):
    """(1/N) dphi/dt per site: the imaginary part of the guidance ratio."""
    return guidance_ratio(state, phi, basis).imag


def velocity(state, phi, leaf, basis):
    """dphi/dt per site at unit label rate: lapse times Im guidance ratio."""
    return leaf.lapse * momentum(state, phi, basis)


def _log_magnitude(den, q, frequencies):
    """log |Psi| = log |sum a_k P_k| + log Gaussian at mode coordinates q."""
    mag = abs(den)
    if mag < NODE_THRESHOLD:
        raise NodeError("wave functional vanishes at this configuration")
    return math.log(mag) - 0.5 * float(np.sum(frequencies * q**2))


def step_rk4(state, traj, leaf, basis, dt, *, max_dphi=1e3, node_drop=1e-10,
             max_bisections=20):
    """Advance the realized field by dt of foliation label with RK4.

    ``state`` is the wave functional at the trajectory's current label; the
    stages use the stationary evolution of that state to the stage times.
    Mode coordinates of the returned field are recomputed from the advanced
    site values, so both views stay consistent.

    Raises
    ------
    NodeError
        If |Psi| falls below ``node_drop`` times its leaf-start value and
        bisection cannot step around the node.
    StepUnderflowError
        If the per-step field increment exceeds ``max_dphi`` even after
        ``max_bisections`` halvings.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    freqs = basis.frequencies
    q0 = traj.field.mode_coords
    _, den0 = mode_ratio_parts(state, basis, q0)
    ref_log = _log_magnitude(den0, q0, freqs)
    log_floor = ref_log + math.log(node_drop)

    def slope(t_offset, phi_sites):
        stage_state = evolve_stationary(state, t_offset, basis)
        q = basis.analyze(phi_sites)
        num, den = mode_ratio_parts(stage_state, basis, q)
        if _log_magnitude(den, q, freqs) < log_floor:
            raise _NodeProximity
        return leaf.lapse * ((num / den) @ basis.modes).imag

    first_slope = None

    def advance(phi_sites, t_offset, h, depth):
        nonlocal first_slope
        try:
            k1 = slope(t_offset, phi_sites)
            k2 = slope(t_offset + h / 2.0, phi_sites + (h / 2.0) * k1)
            k3 = slope(t_offset + h / 2.0, phi_sites + (h / 2.0) * k2)
            k4 = slope(t_offset + h, phi_sites + h * k3)
            delta = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        except _NodeProximity:
            if depth >= max_bisections:
                raise NodeError(
                    f"trajectory pinned at a wave-functional node near t offset "
                    f"{t_offset:g} after {max_bisections} bisections"
                ) from None
            mid = advance(phi_sites, t_offset, h / 2.0, depth + 1)
            return advance(mid, t_offset + h / 2.0, h / 2.0, depth + 1)
        if np.max(np.abs(delta)) > max_dphi:
            if depth >= max_bisections:
                raise StepUnderflowError(
                    f"field increment exceeds {max_dphi:g} per step after "
                    f"{max_bisections} bisections"
                )
            mid = advance(phi_sites, t_offset, h / 2.0, depth + 1)
            return advance(mid, t_offset + h / 2.0, h / 2.0, depth + 1)
        if first_slope is None:
            first_slope = k1
        return phi_sites + delta

    new_sites = advance(np.array(traj.field.site_values), 0.0, float(dt), 0)
    return TrajectoryState(
        leaf_label=traj.leaf_label + dt,
        field=FieldConfig.from_sites(new_sites, basis),
        velocity_cache=first_slope,
    )


def integrate_mode_coords(state, basis, q, t_start, t_end, n_steps, lapse=1.0):
    """Fixed-step RK4 on mode coordinates, vectorised over a batch.

    ``q`` has shape (..., n_modes); ``state`` is the wave functional at
    label ``t_start``.  For a uniform scalar lapse the mode-space equation
    dq_r/dt = lapse * Im(num_r / den) is the exact orthonormal projection
    of the site-space guidance velocity, and RK4 commutes with the linear
    site/mode change of coordinates, so this reproduces ``step_rk4``
    trajectories to rounding.  Used for ensembles and fine-step references.
    """
    q = np.array(q, dtype=float)
    if n_steps <= 0:
        raise ValueError("n_steps must be positive")
    h = (t_end - t_start) / n_steps

    def slope(t, q_now):
        stage_state = evolve_stationary(state, t - t_start, basis)
        num, den = mode_ratio_parts(stage_state, basis, q_now)
        if np.min(np.abs(den)) < NODE_THRESHOLD:
            n_bad = int(np.count_nonzero(np.abs(den) < NODE_THRESHOLD))
            raise NodeError(f"{n_bad} ensemble member(s) hit a wave-functional node")
        return lapse * (num / den[..., None]).imag

    t = t_start
    for _ in range(n_steps):
        k1 = slope(t, q)
        k2 = slope(t + h / 2.0, q + (h / 2.0) * k1)
        k3 = slope(t + h / 2.0, q + (h / 2.0) * k2)
        k4 = slope(t + h, q + h * k3)
        q = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return q
