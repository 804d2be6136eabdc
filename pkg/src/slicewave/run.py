"""Run orchestration: the leaf-by-leaf loop, ensembles, and self checks.

``run`` yields one LeafRecord per leaf.  Records are self-describing JSON
lines carrying everything needed to resume a run mid-stream (field, label
coefficients, leaf geometry); byte-identical output for identical configs
is part of the contract, so wall-clock timings are kept out of the
serialised form and go to stderr when SLICEWAVE_VERBOSE is set.
"""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import RunConfig
from .errors import UnsupportedConfigError
from .foliation import (
    DYNAMIC,
    EQUAL_TIME,
    BOOSTED,
    FoliationStrategy,
    advance_leaf,
    flow_vectors,
    initial_leaf,
    step_lapse,
)
from .functionals import (
    LabelFunction,
    WaveFunctionalState,
    evaluate,
    evolve_stationary,
    mode_ratio_parts,
    reproject,
)
from .geometry import FieldConfig, Leaf, ModeBasis, kinetic_operator, inner, spectral_sqrt, summation_by_parts_residual
from .guidance import TrajectoryState, integrate_mode_coords, momentum, step_rk4
from .stress_energy import boost_matrix, compute_stress_energy, timelike_eigenvector

__all__ = [
    "LeafRecord",
    "build_initial",
    "run",
    "EnsembleReport",
    "ensemble",
    "CheckResult",
    "SelfCheckReport",
    "selfcheck",
]

#: Below this many samples the KS noise floor 1.36/sqrt(n) exceeds the
#: 0.05 equivariance threshold and the report flags the run.
MIN_ENSEMBLE_SAMPLES = 740


@dataclass
class LeafRecord:
    """Snapshot of one leaf: geometry, field, guidance and flow data.

    ``wall_ms`` is filled at runtime but never serialised, keeping record
    streams byte-deterministic for identical configs.
    """

    step: int
    t: float
    phi: list
    velocity: list
    rho: list
    mode_coords: list
    lapse: list
    flow: list
    leaf_points: list
    period_vector: list
    labels: list
    log_psi_abs: float
    degenerate_sites: int
    projection_residual: float
    nonstationary_basis: bool
    wall_ms: float = field(default=0.0, compare=False)

    _FIELDS = (
        "step", "t", "phi", "velocity", "rho", "mode_coords", "lapse", "flow",
        "leaf_points", "period_vector", "labels", "log_psi_abs",
        "degenerate_sites", "projection_residual", "nonstationary_basis",
    )

    def to_json(self):
        return json.dumps({name: getattr(self, name) for name in self._FIELDS})

    @classmethod
    def from_json(cls, line):
        data = json.loads(line)
        return cls(**{name: data[name] for name in cls._FIELDS})


def _serialize_state(state):
    terms = []
    for term in state.terms:
        amp = [term.amplitude.real, term.amplitude.imag]
        labels = [[[c.real, c.imag] for c in lab.coeffs] for lab in term.labels]
        terms.append([amp, labels])
    return terms


def _state_from_serialized(terms, basis):
    rebuilt = []
    for (amp_re, amp_im), labels in terms:
        labs = [
            LabelFunction(np.array([complex(re, im) for re, im in coeffs]),
                          basis.basis_id)
            for coeffs in labels
        ]
        rebuilt.append((complex(amp_re, amp_im), labs))
    return WaveFunctionalState.from_terms(rebuilt, basis)


def _strategy(config):
    return FoliationStrategy(kind=config.foliation, d_eps=config.d_eps,
                             velocity=config.boost_v, lapse_table=config.lapse_table)


def build_initial(config):
    """Initial (leaf, basis, state, field, strategy) for a config."""
    strategy = _strategy(config)
    leaf = initial_leaf(strategy, config.sites, config.dx)
    _, basis = spectral_sqrt(kinetic_operator(leaf, config.mass), leaf)
    terms = [
        (complex(a), [LabelFunction(config.padded_label(c), basis.basis_id)
                      for c in labels])
        for a, labels in config.state_terms
    ]
    state = WaveFunctionalState.from_terms(terms, basis)
    if config.field_site_values is not None:
        phi = FieldConfig.from_sites(np.asarray(config.field_site_values), basis)
    else:
        phi = FieldConfig.from_modes(config.padded_mode_coords(), basis)
    return leaf, basis, state, phi, strategy


def _restore(config, record):
    strategy = _strategy(config)
    leaf = Leaf(label=record.t, points=np.asarray(record.leaf_points),
                dx=config.dx, period_vector=np.asarray(record.period_vector))
    _, basis = spectral_sqrt(kinetic_operator(leaf, config.mass), leaf)
    state = _state_from_serialized(record.labels, basis)
    phi = FieldConfig.from_sites(np.asarray(record.phi), basis)
    return leaf, basis, state, phi, strategy


def run(config, resume_from=None):
    """Generator of LeafRecords for a configured run.

    Emits a record for the initial leaf and one per advanced leaf
    (``config.steps + 1`` records overall).  Per step: momentum and
    stress-energy on the current leaf, displacement field and lapse, RK4
    advance of the realized field over d_eps, stationary label evolution,
    geometric advance of the leaf, and re-projection of labels when leaf
    deformation changed the mode operator.

    Errors (NodeError, StepUnderflowError, FoliationCollapseError)
    propagate after all completed records have been yielded.
    """
    if resume_from is None:
        leaf, basis, state, phi, strategy = build_initial(config)
        start = 0
    else:
        leaf, basis, state, phi, strategy = _restore(config, resume_from)
        start = resume_from.step
    verbose = _verbose()
    proj_residual = 0.0
    nonstationary = False

    for step in range(start, config.steps + 1):
        tick = time.perf_counter()
        pi = momentum(state, phi, basis)
        se = compute_stress_energy(phi.site_values, pi, leaf, config.mass)
        if strategy.kind == DYNAMIC:
            flow, n_deg = se.flow, se.n_degenerate
        else:
            flow, n_deg = flow_vectors(strategy, leaf, phi.site_values, pi,
                                       config.mass, step)
        lapse = step_lapse(leaf, flow)
        val = evaluate(state, phi, basis)
        record = LeafRecord(
            step=step,
            t=leaf.label,
            phi=phi.site_values.tolist(),
            velocity=(lapse * pi).tolist(),
            rho=se.energy_density.tolist(),
            mode_coords=phi.mode_coords.tolist(),
            lapse=lapse.tolist(),
            flow=flow.tolist(),
            leaf_points=leaf.points.tolist(),
            period_vector=leaf.period_vector.tolist(),
            labels=_serialize_state(state),
            log_psi_abs=math.log(abs(val.value)) + val.log_gaussian
            if abs(val.value) > 0 else -math.inf,
            degenerate_sites=int(n_deg),
            projection_residual=proj_residual,
            nonstationary_basis=nonstationary,
            wall_ms=(time.perf_counter() - tick) * 1e3,
        )
        yield record
        if step == config.steps:
            break

        stepping = leaf.with_lapse(lapse)
        traj = TrajectoryState(leaf_label=leaf.label, field=phi)
        traj = step_rk4(state, traj, stepping, basis, strategy.d_eps,
                        max_dphi=config.max_dphi)
        state = evolve_stationary(state, strategy.d_eps, basis)
        new_leaf = advance_leaf(stepping, flow, strategy.d_eps)
        if new_leaf.same_intrinsic_geometry(leaf):
            phi = FieldConfig.from_sites(traj.field.site_values, basis)
            proj_residual, nonstationary = 0.0, False
        else:
            _, new_basis = spectral_sqrt(kinetic_operator(new_leaf, config.mass),
                                         new_leaf)
            state, proj_residual = reproject(state, basis, new_basis)
            phi = FieldConfig.from_sites(traj.field.site_values, new_basis)
            basis = new_basis
            nonstationary = True
        leaf = new_leaf
        if verbose:
            print(f"step {step}: t={leaf.label:.6g} wall={record.wall_ms:.2f}ms",
                  file=sys.stderr)


def _verbose():
    import os

    return os.environ.get("SLICEWAVE_VERBOSE", "") not in ("", "0")


# ---------------------------------------------------------------------------
# ensemble / equivariance
# ---------------------------------------------------------------------------


@dataclass
class EnsembleReport:
    """Kolmogorov-Smirnov distances of an evolved ensemble vs |Psi(t)|^2."""

    mode_index: int
    omega: float
    n_samples: int
    seed: int
    entries: list            # (time, ks_distance) pairs
    warnings: list

    def to_json(self):
        return json.dumps({
            "mode_index": self.mode_index,
            "omega": self.omega,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "entries": self.entries,
            "warnings": self.warnings,
        })


def _single_mode_index(config, basis, state):
    """Index of the one mode all labels live on, or raise."""
    support = set()
    for term in state.terms:
        for lab in term.labels:
            support.update(np.nonzero(np.abs(lab.coeffs) > 0)[0].tolist())
    if len(support) != 1:
        raise UnsupportedConfigError(
            "ensemble mode needs a single-mode initial state "
            f"(labels touch modes {sorted(support)})"
        )
    return int(support.pop())


def _marginal_density(state, basis, mode, grid, t):
    """Unnormalised |Psi(t)|^2 marginal over the single excited coordinate."""
    q = np.zeros((grid.size, basis.n_modes))
    q[:, mode] = grid
    evolved = evolve_stationary(state, t, basis)
    _, den = mode_ratio_parts(evolved, basis, q)
    omega = basis.frequencies[mode]
    return np.abs(den) ** 2 * np.exp(-omega * grid**2)


def _normalised_cdf(grid, density):
    bins = 0.5 * (density[1:] + density[:-1]) * np.diff(grid)
    cdf = np.concatenate([[0.0], np.cumsum(bins)])
    return cdf / cdf[-1]


def ensemble(config):
    """Sample |Psi(0)|^2, evolve every trajectory, report KS distances.

    Trajectories are integrated in mode coordinates (vectorised over the
    whole ensemble), which is exactly the site-space RK4 dynamics for the
    stationary leaf families this mode supports.
    """
    if config.foliation not in (EQUAL_TIME, BOOSTED):
        raise UnsupportedConfigError(
            "ensemble mode needs a stationary leaf family (equal_time or boosted): "
            "each trajectory of a dynamic foliation would steer its own leaves"
        )
    leaf, basis, state, _, strategy = build_initial(config)
    mode = _single_mode_index(config, basis, state)
    omega = float(basis.frequencies[mode])
    period = 2.0 * math.pi / omega

    half_width = 10.0 / math.sqrt(omega)
    grid = np.linspace(-half_width, half_width, 8001)
    cdf0 = _normalised_cdf(grid, _marginal_density(state, basis, mode, grid, 0.0))

    rng = np.random.default_rng(config.seed)
    samples = np.interp(rng.random(config.ensemble_size), cdf0, grid)

    warnings = []
    if config.ensemble_size < MIN_ENSEMBLE_SAMPLES:
        warnings.append(
            f"insufficient samples: KS noise floor 1.36/sqrt(n) = "
            f"{1.36 / math.sqrt(config.ensemble_size):.3f} exceeds the 0.05 threshold"
        )

    times = sorted(set(float(t) for t in config.ensemble_times))
    q = np.zeros((config.ensemble_size, basis.n_modes))
    q[:, mode] = samples
    entries = []
    t_now = 0.0
    for t_target in times:
        if t_target > t_now:
            n_steps = max(8, int(math.ceil((t_target - t_now) / (period / 256.0))))
            q = integrate_mode_coords(state, basis, q, t_now, t_target, n_steps)
            t_now = t_target
        cdf_t = _normalised_cdf(grid, _marginal_density(state, basis, mode, grid, t_target))
        ks = stats.ks_1samp(q[:, mode], lambda x: np.interp(x, grid, cdf_t)).statistic
        entries.append((t_target, float(ks)))
    return EnsembleReport(mode_index=mode, omega=omega,
                          n_samples=config.ensemble_size, seed=config.seed,
                          entries=entries, warnings=warnings)


# ---------------------------------------------------------------------------
# selfcheck
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float
    threshold: float

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:28s} {status}  residual={self.residual:.3e}  (< {self.threshold:g})"


@dataclass
class SelfCheckReport:
    checks: list

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def __str__(self):
        lines = [c.line() for c in self.checks]
        lines.append("selfcheck: " + ("all checks passed" if self.ok else "FAILURES present"))
        return "\n".join(lines)


def _wiggly_leaf(rng, n=32, dx=0.5):
    """A valid non-flat leaf with mild embedding wiggles."""
    x = np.arange(n) * dx
    t_wiggle = 0.1 * np.sin(2 * np.pi * x / (n * dx)) + 0.05 * rng.standard_normal(n)
    x_wiggle = x + 0.05 * np.sin(4 * np.pi * x / (n * dx))
    return Leaf(label=0.0, points=np.column_stack([t_wiggle, x_wiggle]), dx=dx,
                period_vector=np.array([0.0, n * dx]))


def selfcheck(k_perturbation=0.0):
    """Run the module-level invariant suites and collect pass/fail lines.

    ``k_perturbation`` deliberately breaks the self-adjointness of the mode
    operator before that check runs; nonzero values must make the check
    fail (negative control for the harness itself).
    """
    rng = np.random.default_rng(20240817)
    checks = []

    # analytic 4-site spectrum {1, 3, 3, 5}
    leaf4 = Leaf.equal_time(4, 1.0)
    k4 = kinetic_operator(leaf4, 1.0)
    _, basis4 = spectral_sqrt(k4, leaf4)
    res = float(np.max(np.abs(basis4.frequencies**2 - np.array([1.0, 3.0, 3.0, 5.0]))))
    checks.append(CheckResult("analytic_4site_spectrum", res < 1e-12, res, 1e-12))

    # dispersion error drops 4x when dx halves (fixed physical size)
    errs = []
    for sites, dx in ((32, 0.5), (64, 0.25)):
        leaf = Leaf.equal_time(sites, dx)
        _, basis = spectral_sqrt(kinetic_operator(leaf, 1.0), leaf)
        k_mode = 2.0 * math.pi * 2 / (sites * dx)
        errs.append(abs(basis.frequencies[4] ** 2 - (1.0 + k_mode**2)))
    ratio = errs[0] / errs[1]
    res = abs(ratio - 4.0)
    checks.append(CheckResult("dispersion_convergence", res < 0.8, res, 0.8))

    # mu-weighted self-adjointness of K (k_perturbation breaks it on purpose)
    leaf = _wiggly_leaf(rng)
    k = kinetic_operator(leaf, 1.3)
    if k_perturbation:
        bump = np.zeros_like(k)
        bump[0, 1] = k_perturbation
        k = k + bump
    weighted = leaf.measure[:, None] * k
    res = float(np.max(np.abs(weighted - weighted.T)))
    checks.append(CheckResult("k_self_adjointness", res < 1e-12, res, 1e-12))

    # summation-by-parts identity on random fields
    res = max(
        summation_by_parts_residual(rng.standard_normal(leaf.n_sites), leaf)
        for _ in range(20)
    )
    checks.append(CheckResult("summation_by_parts", res < 1e-13, res, 1e-13))

    # one- and two-label closed forms on a synthetic basis
    from .functionals import eval_term  # local to keep module import light

    res = 0.0
    for _ in range(50):
        freqs = rng.uniform(0.5, 3.0, size=5)
        basis = ModeBasis.synthetic(freqs)
        qs = rng.standard_normal(5)
        phi = FieldConfig.from_modes(qs, basis)
        n, m = rng.integers(0, 5, size=2)
        ln = LabelFunction.from_mode(n, basis)
        lm = LabelFunction.from_mode(m, basis)
        w, qn = basis.frequencies[n], qs[n]
        w2, qm = basis.frequencies[m], qs[m]
        res = max(res, abs(eval_term([ln], phi, basis) - math.sqrt(2) * qn * w))
        expect = 2 * qn * qm * w * w2 - (w2 if n == m else 0.0)
        res = max(res, abs(eval_term([ln, lm], phi, basis) - expect))
    checks.append(CheckResult("hermite_closed_forms", res < 1e-12, res, 1e-12))

    # Hamiltonian eigenstate property on a real leaf basis
    from .functionals import apply_hamiltonian

    leaf8 = Leaf.equal_time(8, 0.5)
    _, basis8 = spectral_sqrt(kinetic_operator(leaf8, 1.0), leaf8)
    res = 0.0
    for n, m in ((1, 1), (2, 5), (0, 3)):
        labels = [LabelFunction.from_mode(n, basis8), LabelFunction.from_mode(m, basis8)]
        st = WaveFunctionalState.from_terms([(1.0, labels)], basis8)
        expected = basis8.frequencies[n] + basis8.frequencies[m]
        for _ in range(10):
            phi = FieldConfig.from_sites(rng.standard_normal(8), basis8)
            lhs = evaluate(apply_hamiltonian(st, basis8), phi, basis8).value
            rhs = expected * evaluate(st, phi, basis8).value
            res = max(res, abs(lhs - rhs) / max(1.0, abs(rhs)))
    checks.append(CheckResult("hamiltonian_eigenstates", res < 1e-10, res, 1e-10))

    # Lorentz covariance of the stress-energy flow
    res = 0.0
    for v in (0.3, 0.6, 0.9):
        lam = boost_matrix(v)
        for _ in range(10):
            phi_val, pi_val, sig = rng.standard_normal(3)
            if abs(abs(pi_val) - abs(sig)) < 0.1:
                sig += 0.5  # stay away from light-like flux
            rest = _tensor_from_data(phi_val, pi_val, sig, 1.0)
            w_rest = timelike_eigenvector(rest)
            pi_b = lam[0, 0] * pi_val - lam[0, 1] * sig
            sig_b = lam[1, 1] * sig - lam[1, 0] * pi_val
            boosted = _tensor_from_data(phi_val, pi_b, sig_b, 1.0)
            w_boost = timelike_eigenvector(boosted)
            res = max(res, float(np.max(np.abs(w_boost - lam @ w_rest))))
    checks.append(CheckResult("stress_energy_covariance", res < 1e-10, res, 1e-10))

    return SelfCheckReport(checks)


def _tensor_from_data(phi_val, pi_val, sigma, mass):
    """T_mn of single-site flat-leaf data (pi, sigma) without a leaf."""
    grad = np.array([pi_val, sigma])  # lower components on a flat leaf
    lagrangian = 0.5 * (pi_val**2 - sigma**2 - mass**2 * phi_val**2)
    return np.outer(grad, grad) - lagrangian * np.diag([1.0, -1.0])
