"""Experiment orchestration: configs, registry, runner, and plot-data export.

A run turns one config file into one output directory: the named pipeline
executes, its reports and acceptance checks land in ``run_record.json``, and
every numeric artifact is CSV or JSON with fixed formatting, so rerunning a
config with the same seed reproduces the files byte for byte (wall time is
stored only in the run record).  The ``rlf-lab`` console entry point wraps
this module for shell use:

    rlf-lab run <config.json|config.yaml>
    rlf-lab list-experiments
    rlf-lab emit-plots <run-dir>

Exit codes: 0 when all acceptance checks pass, 2 when any check fails,
1 on errors (unknown experiment, invalid spec, unreadable inputs).
"""

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from importlib import metadata

import numpy as np

from .fields import free_field, make_potential, field_from_potential
from .flow import StepControl, integrate_trajectory, flow_map, check_rlf, measure_flow
from .measures import (
    GridSpec,
    MeasureEnsemble,
    ParticleMeasure,
    density_estimate,
    dirac_ensemble,
    dyadic_dictionary,
    uniform_cloud,
)
from .weakform import (
    StabilityReport,
    admissible_functions,
    decay_stat,
    default_time_bumps,
    limit_continuity_stat,
    space_tightness_stat,
    stability_gap,
    time_tightness_stat,
    uniform_regularity_stat,
    worst_fractions_report,
)
from .quantum import (
    SpatialGrid,
    alpha1_experiment,
    bump_envelope,
    evolve,
    gaussian_envelope,
    husimi,
    semiclassical_experiment,
    time_reversal_defect,
    wigner,
)

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "run_experiment",
    "emit_plotdata",
    "list_experiments",
    "resolve_output_dir",
    "main",
    "OUTPUT_ROOT_ENV",
]

OUTPUT_ROOT_ENV = "RLF_LAB_OUTPUT_ROOT"

try:
    _VERSION = metadata.version("rlflab")
except metadata.PackageNotFoundError:      # running from a source tree
    _VERSION = "0.0.0+source"

_ENVELOPES = {"bump": bump_envelope, "gaussian": gaussian_envelope}


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _write_csv(path, header, rows) -> str:
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(c) for c in row) + "\n")
    return path


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_CONFIG_KEYS = ("experiment", "seed", "field", "ensemble", "grid", "params",
                "output_dir")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run: pipeline name, component specs, numeric settings.

    ``field`` / ``ensemble`` / ``grid`` are named-family spec dictionaries
    (potential families as in :func:`rlflab.fields.make_potential`, ensemble
    kinds ``uniform`` and ``points``); ``params`` holds the pipeline's
    numeric settings (eps lists, horizons, tolerances, sweep lists), which
    the runner completes with the registered defaults.  The seed is
    mandatory; nothing ever falls back to wall-clock entropy.
    """

    experiment: str
    seed: int
    field: dict = None
    ensemble: dict = None
    grid: dict = None
    params: dict = None
    output_dir: str = "runs/out"

    def __post_init__(self):
        if self.experiment not in REGISTRY:
            raise ValueError(
                f"unknown experiment {self.experiment!r}; registered: "
                f"{', '.join(sorted(REGISTRY))}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ValueError("seed is mandatory and must be an integer")
        for name in ("field", "ensemble", "grid", "params"):
            v = getattr(self, name)
            if v is None:
                object.__setattr__(self, name, {})
            elif not isinstance(v, dict):
                raise ValueError(f"config section {name!r} must be a mapping")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise ValueError("output_dir must be a non-empty path")
        if self.field:
            make_potential(self.field)     # resolve against known families now

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _CONFIG_KEYS}

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(_CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        if "experiment" not in d:
            raise ValueError("config must name an experiment")
        if "seed" not in d:
            raise ValueError("config must carry an explicit RNG seed")
        return ExperimentConfig(**d)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def load(path) -> "ExperimentConfig":
        text = open(path).read()
        if str(path).endswith((".yaml", ".yml")):
            import yaml
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError(f"config file {path} does not hold a mapping")
        return ExperimentConfig.from_dict(data)


def resolve_output_dir(config: ExperimentConfig) -> str:
    """The run directory, re-rooted by ``RLF_LAB_OUTPUT_ROOT`` when set."""
    out = config.output_dir
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    return out


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    """What one run produced: resolved config, reports, checks, provenance.

    Every report key the pipeline declares is present in ``reports``; a
    stage that did not run appears as ``{"skipped": reason}``.  Wall time
    lives here and in no CSV, keeping reruns byte-comparable.
    """

    config: ExperimentConfig
    reports: dict
    acceptance: tuple
    wall_time: float
    version: str
    output_dir: str

    @property
    def passed(self) -> bool:
        return all(bool(c.get("passed")) for c in self.acceptance)

    def to_json_dict(self) -> dict:
        return {
            "schema": "rlflab.run_record.v1",
            "config": self.config.to_dict(),
            "reports": self.reports,
            "acceptance": list(self.acceptance),
            "passed": self.passed,
            "wall_time": self.wall_time,
            "version": self.version,
            "output_dir": self.output_dir,
        }

    def save(self) -> str:
        path = os.path.join(self.output_dir, "run_record.json")
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    @staticmethod
    def load(directory) -> "RunRecord":
        path = os.path.join(str(directory), "run_record.json")
        with open(path) as f:
            d = json.load(f)
        return RunRecord(
            config=ExperimentConfig.from_dict(d["config"]),
            reports=d["reports"],
            acceptance=tuple(d["acceptance"]),
            wall_time=float(d["wall_time"]),
            version=d["version"],
            output_dir=d["output_dir"],
        )


def _check(name: str, passed, **detail) -> dict:
    entry = {"name": name, "passed": bool(passed)}
    entry.update(detail)
    return entry


def _skipped(reports: dict, keys, reason: str) -> None:
    for k in keys:
        reports.setdefault(k, {"skipped": reason})


# ---------------------------------------------------------------------------
# Shared spec builders
# ---------------------------------------------------------------------------

def _make_cloud(spec: dict, rng) -> ParticleMeasure:
    kind = spec.get("kind")
    if kind == "uniform":
        return uniform_cloud(spec["box"], int(spec["n"]), rng)
    if kind == "points":
        pts = np.atleast_2d(np.asarray(spec["points"], dtype=float))
        w = spec.get("weights")
        if w is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(w, dtype=float)
            w = w / w.sum()
        return ParticleMeasure(pts, w)
    raise ValueError(f"unknown ensemble kind {kind!r} (use 'uniform' or 'points')")


def _field_of(config: ExperimentConfig):
    pot = make_potential(config.field)
    return pot, field_from_potential(pot, name=str(config.field.get("family")))


def _samples_rho(params) -> tuple:
    samples = np.atleast_2d(np.asarray(params["samples"], dtype=float))
    rho = np.asarray(params["rho"], dtype=float).ravel()
    return samples, rho / rho.sum()


# ---------------------------------------------------------------------------
# Pipeline: rlf-check
# ---------------------------------------------------------------------------

def _run_rlf_check(config, rng, outdir):
    p = config.params
    _, b = _field_of(config)
    cloud = _make_cloud(config.ensemble, rng)
    ctl = StepControl(dt=p["dt"])
    times = np.linspace(0.0, p["T"], p["n_times"])
    fm = flow_map(b, cloud, p["T"], store_times=times, control=ctl)

    box = config.grid.get("box")
    if box is None:
        lo = fm.states.min(axis=(0, 1)) - 0.5
        hi = fm.states.max(axis=(0, 1)) + 0.5
        box = np.stack([lo, hi], axis=1)
    cells = config.grid.get("cells", p["grid_cells"])
    if np.isscalar(cells):
        cells = (int(cells),) * cloud.dim
    grid = GridSpec(box, tuple(cells))

    C = p["C"]
    if C is None:
        # calibrate against the initial cloud: a measure-preserving flow must
        # stay within slack of its own starting density
        C = float(density_estimate(cloud, grid, p["bandwidth"]).max_value)
    report = check_rlf(fm, C, grid, bandwidth=p["bandwidth"], slack=p["slack"],
                       ode_tol=p["ode_tol"], n_ode_samples=p["n_ode_samples"],
                       n_time_checks=p["n_time_checks"], rng=rng, control=ctl)
    with open(os.path.join(outdir, "rlf_report.json"), "w") as f:
        json.dump(report.to_json_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    _write_csv(os.path.join(outdir, "density_profile.csv"),
               ["t", "max_density", "bound"],
               [[_fmt(t), _fmt(v), _fmt(C * (1.0 + p["slack"]))]
                for t, v in zip(report.checked_times, report.per_time_max)])
    _write_csv(os.path.join(outdir, "ode_residuals.csv"),
               ["sample", "residual"],
               [[i, _fmt(r)] for i, r in enumerate(report.ode_residuals)])

    reports = {"check_rlf": report.to_json_dict()}
    checks = [
        _check("rlf_ode_property", report.max_ode_residual <= report.ode_tol,
               value=report.max_ode_residual, threshold=report.ode_tol),
        _check("rlf_density_bound",
               report.density_max <= C * (1.0 + p["slack"]),
               value=report.density_max, threshold=C * (1.0 + p["slack"])),
        _check("check_rlf", report.passed),
    ]
    return reports, checks


# ---------------------------------------------------------------------------
# Pipeline: stability-hypotheses
# ---------------------------------------------------------------------------

def _run_stability(config, rng, outdir):
    p = config.params
    _, b = _field_of(config)
    samples, rho = _samples_rho(p)
    m, dim = samples.shape
    if dim != b.dim:
        raise ValueError(f"samples have dim {dim}, field has {b.dim}")
    ctl = StepControl(dt=p["dt"])
    times = np.linspace(0.0, p["T"], p["n_times"])

    base = ParticleMeasure(samples, rho)
    classical = measure_flow(b, dirac_ensemble(base, m), p["T"],
                             store_times=times, control=ctl)

    # one shared normal draw, scaled down level by level: the perturbed
    # ensembles shrink onto the Dirac reference as the index grows
    k = int(p["cloud_points"])
    G = rng.standard_normal((m, k, dim))
    sigmas = [p["jitter0"] * p["jitter_factor"] ** lev
              for lev in range(int(p["n_levels"]))]
    families = []
    for s in sigmas:
        members = tuple(
            (float(rho[j]),
             ParticleMeasure(samples[j] + s * G[j], np.full(k, 1.0 / k)))
            for j in range(m)
        )
        families.append(measure_flow(b, MeasureEnsemble(members), p["T"],
                                     store_times=times, control=ctl))

    all_pts = np.concatenate(
        [sl.points for fam in [classical] + families
         for cu in fam.curves for sl in cu.slices])
    ext = np.abs(all_pts).max(axis=0) + 1.0
    box = np.stack([-ext, ext], axis=1)
    dictionary = dyadic_dictionary(box, scales=p["dict_scales"])
    phis = dictionary.nonnegative_functions()

    C = uniform_regularity_stat(classical, phis, C=1.0, slack=0.0).value
    reg_reports = [uniform_regularity_stat(fam, phis, C, slack=p["reg_slack"])
                   for fam in families]
    worst = reg_reports[int(np.argmax([r.value for r in reg_reports]))]

    R = float(np.linalg.norm(ext))
    if b.singular_set.is_empty:
        dec, dec_reason = None, "no singular set in the potential"
    else:
        dec = decay_stat(families, beta=p["decay_beta"],
                         delta_list=tuple(p["decay_deltas"]), radius=R,
                         s=b.singular_set, x_dim=b.n,
                         spread_max=p["decay_spread_max"])
        dec_reason = ""

    radii = (0.6 * R, 0.8 * R, R, R + 1.0)
    space = worst_fractions_report(
        [space_tightness_stat(fam, p["tight_eps"], radii) for fam in families],
        "space")
    probe = [time_tightness_stat(fam, phis, [1.0]) for fam in families]
    max_tv = max(max(r.variations) for r in probe)
    M_list = tuple(f * max_tv for f in (0.25, 0.5, 1.0, 2.0)) if max_tv > 0 \
        else (0.5, 1.0, 2.0, 4.0)
    time_rep = worst_fractions_report(
        [time_tightness_stat(fam, phis, M_list) for fam in families], "time")

    lim_phis = admissible_functions(phis, b)
    if not lim_phis:
        raise ValueError(
            "no test function clears the singular margin; enlarge the "
            "dictionary box or refine its scales")
    lim = limit_continuity_stat(families, b, lim_phis,
                                default_time_bumps(p["T"]),
                                floor=p["lim_floor"], rel_slack=p["lim_slack"])
    gaps = tuple(stability_gap(fam, classical, dictionary) for fam in families)
    gap_dec = bool(all(gaps[i + 1] < gaps[i] for i in range(len(gaps) - 1)))

    report = StabilityReport(regularity=worst, decay=dec,
                             space_tightness=space, time_tightness=time_rep,
                             limit_continuity=lim, gap_values=gaps,
                             gap_decreasing=gap_dec,
                             decay_skip_reason=dec_reason)
    report.save_json(os.path.join(outdir, "stability_report.json"))
    report.export_csv(outdir)
    _write_csv(os.path.join(outdir, "sweep_levels.csv"),
               ["level", "jitter", "gap"],
               [[lev, _fmt(s), _fmt(g)]
                for lev, (s, g) in enumerate(zip(sigmas, gaps))])

    reports = {
        "stability": report.to_json_dict(),
        "levels": {"jitter": [float(s) for s in sigmas],
                   "gap": [float(g) for g in gaps]},
    }
    checks = [
        _check("uniform_regularity", report.regularity.passed,
               value=report.regularity.value, threshold=report.regularity.bound),
        _check("decay", dec.passed if dec is not None else True,
               skipped=dec_reason or None),
        _check("space_tightness", space.passed),
        _check("time_tightness", time_rep.passed),
        _check("limit_continuity", lim.passed, values=list(lim.values)),
        _check("conclusion_gap_decreasing", gap_dec, values=list(gaps)),
    ]
    return reports, checks


# ---------------------------------------------------------------------------
# Pipeline: semiclassical
# ---------------------------------------------------------------------------

def _d_checks(D, eps_list, halving: bool) -> list:
    finite = all(math.isfinite(d) for d in D)
    decreasing = finite and all(b < a for a, b in zip(D, D[1:]))
    checks = [_check("D_strictly_decreasing", decreasing,
                     eps=list(eps_list), D=list(D))]
    if halving:
        checks.append(_check("D_halving", finite and D[-1] < 0.5 * D[0],
                             first=D[0], last=D[-1]))
    return checks


def _run_semiclassical(config, rng, outdir):
    p = config.params
    U, _ = _field_of(config)
    phi0 = _ENVELOPES[p["envelope"]]()
    samples, rho = _samples_rho(p)
    res = semiclassical_experiment(
        U=U, phi0=phi0, alpha=p["alpha"], eps_list=tuple(p["eps_list"]),
        samples=samples, rho=rho, T=p["T"], n_times=p["n_times"], N=p["N"],
        dt_target=p["dt_target"], phase_cells=p["phase_cells"],
        oversample=p["oversample"], phase_tail=p["phase_tail"],
        dict_scales=p["dict_scales"],
        to_measure_threshold=p["to_measure_threshold"],
        reg_slack=p["reg_slack"], tight_eps=p["tight_eps"],
        decay_beta=p["decay_beta"], decay_deltas=tuple(p["decay_deltas"]),
        decay_spread_max=p["decay_spread_max"])
    res.save(outdir)

    reports = {
        "experiment_manifest": res.manifest,
        "D_table": {"eps": list(res.eps_list), "D": list(res.D),
                    "D_forward": list(res.D_forward),
                    "D_backward": list(res.D_backward)},
        "hypotheses": {d: rep.to_json_dict()
                       for d, rep in res.hypotheses.items()},
        "hypothesis_max": res.hypothesis_max,
        "regularity_per_eps": {
            d: {str(e): float(v) for e, v in zip(res.eps_list, per)}
            for d, per in res.regularity_per_eps.items()},
    }
    checks = _d_checks(res.D, res.eps_list, p["require_halving"])
    checks.append(_check("hypotheses_all_passed",
                         res.hypothesis_max.get("all_passed", False)))
    checks.append(_check("no_failed_cells", not res.failed_cells,
                         failed=len(res.failed_cells)))
    return reports, checks


# ---------------------------------------------------------------------------
# Pipeline: alpha1
# ---------------------------------------------------------------------------

def _run_alpha1(config, rng, outdir):
    p = config.params
    U, _ = _field_of(config)
    phi0 = _ENVELOPES[p["envelope"]]()
    x0 = np.asarray(p["x0_samples"], dtype=float).ravel()
    rho = np.asarray(p["rho"], dtype=float).ravel()
    res = alpha1_experiment(
        U=U, phi0=phi0, eps_list=tuple(p["eps_list"]), x0_samples=x0,
        rho=rho / rho.sum(), p0=p["p0"], T=p["T"], n_times=p["n_times"],
        N=p["N"], dt_target=p["dt_target"], gamma_cells=p["gamma_cells"],
        gamma_tail=p["gamma_tail"], phase_cells=p["phase_cells"],
        oversample=p["oversample"], phase_tail=p["phase_tail"],
        dict_scales=p["dict_scales"],
        to_measure_threshold=p["to_measure_threshold"])
    res.save(outdir)

    reports = {
        "experiment_manifest": res.manifest,
        "D_table": {"eps": list(res.eps_list), "D": list(res.D),
                    "D_forward": list(res.D_forward),
                    "D_backward": list(res.D_backward)},
        "t0_concentration": {
            "eps": list(res.eps_list),
            "p_marginal_distance": list(res.t0_marginal_distances),
            "x_variance": list(res.x_variances)},
    }
    checks = _d_checks(res.D, res.eps_list, halving=False)
    t0 = res.t0_marginal_distances
    checks.append(_check("t0_p_marginal_matches_gamma",
                         math.isfinite(t0[-1]) and t0[-1] <= p["t0_marginal_tol"],
                         value=t0[-1], threshold=p["t0_marginal_tol"]))
    xv = res.x_variances
    checks.append(_check("x_variance_decreasing",
                         all(map(math.isfinite, xv))
                         and all(b < a for a, b in zip(xv, xv[1:])),
                         values=list(xv)))
    checks.append(_check("no_failed_cells", not res.failed_cells,
                         failed=len(res.failed_cells)))
    return reports, checks


# ---------------------------------------------------------------------------
# Pipeline: oracle-consistency
# ---------------------------------------------------------------------------

def _free_gaussian(x, t, eps, x0, p0):
    """Dispersive free evolution of the width-sqrt(eps) Gaussian packet."""
    a = 1.0 + 1j * t
    pref = (np.pi * eps) ** -0.25 / np.sqrt(a)
    return pref * np.exp(-(x - x0 - p0 * t) ** 2 / (2.0 * eps * a)
                         + 1j * (p0 * (x - x0) - 0.5 * p0 ** 2 * t) / eps)


def _harmonic_coherent(x, t, eps, omega, x0, p0):
    """Coherent-state evolution in the harmonic well: rigid transport.

    The packet of width sqrt(eps/omega) follows the classical trajectory
    (xc, pc) and picks up the action integral S plus the zero-point phase.
    """
    xc = x0 * np.cos(omega * t) + (p0 / omega) * np.sin(omega * t)
    pc = p0 * np.cos(omega * t) - omega * x0 * np.sin(omega * t)
    S = (p0 ** 2 - omega ** 2 * x0 ** 2) * np.sin(2.0 * omega * t) / (4.0 * omega) \
        + 0.5 * x0 * p0 * (np.cos(2.0 * omega * t) - 1.0)
    pref = (omega / (np.pi * eps)) ** 0.25
    return pref * np.exp(-omega * (x - xc) ** 2 / (2.0 * eps)
                         + 1j * (pc * (x - xc) + S) / eps
                         - 0.5j * omega * t)


def _energy_drift(b, pot, z0, T, dt) -> float:
    traj = integrate_trajectory(b, z0, T, StepControl(dt=dt))
    n = b.n
    x, mom = traj.states[:, :n], traj.states[:, n:]
    E = 0.5 * np.sum(mom ** 2, axis=1) + pot.value(x)
    return float(np.abs(E - E[0]).max() / abs(E[0]))


def _run_oracles(config, rng, outdir):
    from .quantum import WaveFunction  # local to keep module import light

    p = config.params
    entries = []

    def attempt(name, fn):
        try:
            value, threshold, passed = fn()
            entries.append({"name": name, "passed": bool(passed),
                            "value": float(value),
                            "threshold": float(threshold)})
        except Exception as exc:
            entries.append({"name": name, "passed": False, "error": str(exc)})

    def free_flow():
        b = free_field(1)
        z0 = rng.uniform(-2.0, 2.0, size=(int(p["n_free_points"]), 2))
        worst = 0.0
        for z in z0:
            traj = integrate_trajectory(b, z, 1.0, StepControl(dt=1e-2))
            exact = np.array([z[0] + z[1], z[1]])
            worst = max(worst, float(np.abs(traj.final_state - exact).max()))
        return worst, p["free_tol"], worst <= p["free_tol"]

    def harmonic_energy():
        pot = make_potential({"family": "harmonic", "omega": 1.3, "n": 1})
        b = field_from_potential(pot, name="harmonic")
        drift = _energy_drift(b, pot, np.array([1.0, 0.5]),
                              p["energy_T"], p["energy_dt"])
        return drift, p["harmonic_drift_tol"], drift <= p["harmonic_drift_tol"]

    def coulomb_energy():
        pot = make_potential({"family": "coulomb", "k": 1.0, "n": 1,
                              "centers": [[0.0]]})
        b = field_from_potential(pot, name="coulomb")
        drift = _energy_drift(b, pot, np.array([1.5, 0.5]),
                              p["energy_T"], p["energy_dt"])
        return drift, p["coulomb_drift_tol"], drift <= p["coulomb_drift_tol"]

    eps, N, L = p["eps"], int(p["N"]), p["L"]
    grid = SpatialGrid(L=L, N=N)
    free_pot = make_potential({"family": "free", "n": 1})
    harm_pot = make_potential({"family": "harmonic", "omega": 1.3, "n": 1})

    def free_packet():
        psi0 = WaveFunction.normalized(
            grid, _free_gaussian(grid.x, 0.0, eps, 0.3, 0.8), eps)
        steps = int(round(p["quantum_T"] / p["quantum_dt"]))
        psiT = evolve(psi0, free_pot, p["quantum_dt"], steps)
        ref = _free_gaussian(grid.x, p["quantum_T"], eps, 0.3, 0.8)
        err = math.sqrt(float(np.sum(np.abs(psiT.values - ref) ** 2)) * grid.dx)
        return err, p["free_l2_tol"], err <= p["free_l2_tol"]

    def coherent(t=0.0):
        return WaveFunction.normalized(
            grid, _harmonic_coherent(grid.x, t, eps, 1.3, 0.6, -0.4), eps)

    def strang_order():
        psi0 = coherent()
        T = p["quantum_T"]
        errs = []
        for dt in (4e-3, 2e-3, 1e-3):
            psiT = evolve(psi0, harm_pot, dt, int(round(T / dt)))
            ref = _harmonic_coherent(grid.x, T, eps, 1.3, 0.6, -0.4)
            errs.append(math.sqrt(
                float(np.sum(np.abs(psiT.values - ref) ** 2)) * grid.dx))
        ratio = min(errs[0] / errs[1], errs[1] / errs[2])
        return ratio, p["strang_ratio_min"], ratio >= p["strang_ratio_min"]

    def produced_state():
        psi0 = coherent()
        return evolve(psi0, harm_pot, p["quantum_dt"],
                      int(round(0.3 / p["quantum_dt"])))

    def wigner_x():
        psi = produced_state()
        W = wigner(psi)
        xm = np.interp(W.x_centers, psi.grid.x, psi.position_density())
        err = float(np.abs(W.x_marginal - xm).max())
        return err, p["wigner_x_tol"], err <= p["wigner_x_tol"]

    def wigner_p():
        psi = produced_state()
        W = wigner(psi)
        pf, dens = psi.momentum_density()
        pm = np.interp(W.p_centers, pf, dens)
        err = float(np.abs(W.p_marginal - pm).max())
        return err, p["wigner_p_tol"], err <= p["wigner_p_tol"]

    def husimi_mass():
        H = husimi(produced_state())
        err = abs(H.mass - 1.0)
        return err, p["husimi_mass_tol"], err <= p["husimi_mass_tol"]

    def husimi_min():
        H = husimi(produced_state())
        return H.min_raw, -p["husimi_min_tol"], H.min_raw >= -p["husimi_min_tol"]

    def reversal():
        psi0 = coherent()
        d = time_reversal_defect(psi0, harm_pot, p["quantum_dt"], 500)
        return d, p["reversal_tol"], d <= p["reversal_tol"]

    def unitarity():
        psi0 = coherent()
        psiT = evolve(psi0, harm_pot, p["quantum_dt"], 1000)
        drift = abs(psiT.norm - 1.0)
        return drift, p["unitarity_tol"], drift <= p["unitarity_tol"]

    attempt("free_flow_exactness", free_flow)
    attempt("harmonic_energy_drift", harmonic_energy)
    attempt("coulomb_energy_drift", coulomb_energy)
    attempt("free_packet_l2", free_packet)
    attempt("strang_order_ratio", strang_order)
    attempt("wigner_x_marginal", wigner_x)
    attempt("wigner_p_marginal", wigner_p)
    attempt("husimi_unit_mass", husimi_mass)
    attempt("husimi_positivity", husimi_min)
    attempt("time_reversal", reversal)
    attempt("unitarity_drift", unitarity)

    _write_csv(os.path.join(outdir, "oracles.csv"),
               ["name", "value", "threshold", "passed"],
               [[e["name"],
                 _fmt(e.get("value", float("nan"))),
                 _fmt(e.get("threshold", float("nan"))),
                 int(e["passed"])] for e in entries])
    reports = {"oracles": entries}
    checks = [_check(e["name"], e["passed"],
                     **{k: e[k] for k in ("value", "threshold", "error")
                        if k in e})
              for e in entries]
    return reports, checks


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Pipeline:
    fn: object
    description: str
    report_keys: tuple
    defaults: dict
    default_field: dict = None
    default_ensemble: dict = None


REGISTRY = {
    "rlf-check": _Pipeline(
        fn=_run_rlf_check,
        description="flow a cloud and certify the two regular-flow properties",
        report_keys=("check_rlf",),
        defaults={
            "T": 1.0, "dt": 1e-2, "n_times": 33, "C": None, "slack": 0.2,
            "bandwidth": 0.08, "grid_cells": 48, "ode_tol": 1e-6,
            "n_ode_samples": 5, "n_time_checks": 5,
        },
        default_field={"family": "harmonic", "omega": 1.0, "n": 1},
        default_ensemble={"kind": "uniform", "n": 20000,
                          "box": [[-2.0, 2.0], [-2.0, 2.0]]},
    ),
    "stability-hypotheses": _Pipeline(
        fn=_run_stability,
        description="five stability statistics on a shrinking-jitter sweep",
        report_keys=("stability", "levels"),
        defaults={
            "samples": [[1.0, 0.5], [-0.5, 1.0], [0.8, -0.6],
                        [0.0, -1.0], [1.2, 0.3]],
            "rho": [0.3, 0.25, 0.2, 0.15, 0.1],
            "T": 1.0, "n_times": 33, "dt": 1e-2,
            "jitter0": 0.4, "jitter_factor": 0.5, "n_levels": 4,
            "cloud_points": 64, "dict_scales": 3, "reg_slack": 0.5,
            "tight_eps": 0.05, "decay_beta": 2.0,
            "decay_deltas": [0.1, 0.01, 0.001], "decay_spread_max": 2.0,
            "lim_floor": 1e-3, "lim_slack": 0.05,
        },
        default_field={"family": "harmonic", "omega": 1.3, "n": 1},
    ),
    "semiclassical": _Pipeline(
        fn=_run_semiclassical,
        description="concentration sweep against the classical flow, with "
                    "hypothesis statistics",
        report_keys=("experiment_manifest", "D_table", "hypotheses",
                     "hypothesis_max", "regularity_per_eps"),
        defaults={
            "envelope": "bump", "alpha": 0.5,
            "eps_list": [0.4, 0.2, 0.1, 0.05],
            "samples": [[0.9, 0.4], [-0.6, 0.8], [0.3, -0.7],
                        [-0.2, -0.3], [0.7, 0.2]],
            "rho": [0.3, 0.25, 0.2, 0.15, 0.1],
            "T": 1.0, "n_times": 33, "N": 4096, "dt_target": 1e-3,
            "phase_cells": None, "oversample": 2, "phase_tail": 1e-4,
            "dict_scales": 3, "to_measure_threshold": 1e-8,
            "reg_slack": 0.25, "tight_eps": 0.05, "decay_beta": 2.0,
            "decay_deltas": [0.1, 0.01, 0.001], "decay_spread_max": 2.0,
            "require_halving": True,
        },
        default_field={"family": "harmonic", "omega": 1.3, "n": 1},
    ),
    "alpha1": _Pipeline(
        fn=_run_alpha1,
        description="limiting-exponent sweep toward the position-momentum "
                    "product reference",
        report_keys=("experiment_manifest", "D_table", "t0_concentration"),
        defaults={
            "envelope": "bump", "eps_list": [0.4, 0.2, 0.1, 0.05],
            "x0_samples": [0.0, 0.6, -0.4], "rho": [0.5, 0.3, 0.2],
            "p0": 1.0, "T": 0.5, "n_times": 33, "N": 4096,
            "dt_target": 1e-3, "gamma_cells": 64, "gamma_tail": 1e-4,
            "phase_cells": None, "oversample": 2, "phase_tail": 1e-4,
            "dict_scales": 3, "to_measure_threshold": 1e-8,
            "t0_marginal_tol": 0.05,
        },
        default_field={"family": "free", "n": 1},
    ),
    "oracle-consistency": _Pipeline(
        fn=_run_oracles,
        description="closed-form and symmetry oracles for the integrators "
                    "and transforms",
        report_keys=("oracles",),
        defaults={
            "n_free_points": 100, "free_tol": 1e-12,
            "energy_T": 10.0, "energy_dt": 1e-3,
            "harmonic_drift_tol": 1e-8, "coulomb_drift_tol": 1e-6,
            "eps": 0.1, "N": 4096, "L": 40.0,
            "quantum_T": 1.0, "quantum_dt": 1e-3,
            "free_l2_tol": 1e-6, "strang_ratio_min": 3.5,
            "wigner_x_tol": 1e-8, "wigner_p_tol": 1e-6,
            "husimi_mass_tol": 1e-6, "husimi_min_tol": 1e-12,
            "reversal_tol": 1e-8, "unitarity_tol": 1e-9,
        },
    ),
}


def list_experiments() -> list:
    """Registered pipeline names with their one-line descriptions."""
    return [(name, REGISTRY[name].description) for name in sorted(REGISTRY)]


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

def run_experiment(config: ExperimentConfig) -> RunRecord:
    """Execute the named pipeline and persist all artifacts.

    The returned record embeds the fully resolved config (defaults
    expanded), so the run directory is self-describing.  Unknown experiment
    names and malformed specs raise before anything is written; numerical
    failures inside a stage are recorded in the run record instead, and the
    record's acceptance then fails.
    """
    pipe = REGISTRY[config.experiment]
    params = dict(pipe.defaults)
    unknown = set(config.params) - set(params)
    if unknown:
        raise ValueError(
            f"unknown parameter(s) for {config.experiment}: {sorted(unknown)}")
    params.update(config.params)
    resolved = dataclasses.replace(
        config, params=params,
        field=config.field or dict(pipe.default_field or {}),
        ensemble=config.ensemble or dict(pipe.default_ensemble or {}))

    outdir = resolve_output_dir(resolved)
    os.makedirs(outdir, exist_ok=True)
    rng = np.random.default_rng(resolved.seed)

    start = time.perf_counter()
    try:
        reports, checks = pipe.fn(resolved, rng, outdir)
    except Exception as exc:
        reports = {}
        checks = [_check("pipeline_execution", False, error=str(exc))]
    _skipped(reports, pipe.report_keys, "stage did not run")
    record = RunRecord(config=resolved, reports=reports,
                       acceptance=tuple(checks),
                       wall_time=time.perf_counter() - start,
                       version=_VERSION, output_dir=outdir)
    record.save()
    return record


# ---------------------------------------------------------------------------
# Plot-data emission
# ---------------------------------------------------------------------------

def _present(reports: dict, key: str):
    v = reports.get(key)
    if isinstance(v, dict) and "skipped" in v and len(v) == 1:
        return None
    return v


def emit_plotdata(record: RunRecord, directory=None) -> dict:
    """Write per-figure CSVs plus a README mapping each file to its claim.

    An incomplete record yields partial emission: available figures are
    written, the rest are listed in ``plot_manifest.json`` with reasons.
    Returns ``{"written": [...], "gaps": [...], "manifest": path}``.
    """
    outdir = str(directory) if directory is not None \
        else os.path.join(record.output_dir, "plots")
    os.makedirs(outdir, exist_ok=True)
    reports = record.reports
    written, gaps, readme = [], [], []

    def emit(figure, claim, builder):
        try:
            path = builder()
        except KeyError as exc:
            gaps.append({"figure": figure, "reason": f"missing field {exc}"})
            return
        if path is None:
            gaps.append({"figure": figure, "reason": "report skipped or absent"})
            return
        written.append(os.path.basename(path))
        readme.append((os.path.basename(path), claim))

    def d_vs_eps():
        tab = _present(reports, "D_table")
        if tab is None:
            return None
        rows = [[_fmt(e), _fmt(d), _fmt(df), _fmt(db),
                 _fmt(math.log10(e)),
                 _fmt(math.log10(d)) if d > 0 else "nan"]
                for e, d, df, db in zip(tab["eps"], tab["D"],
                                        tab["D_forward"], tab["D_backward"])]
        return _write_csv(os.path.join(outdir, "D_vs_eps_loglog.csv"),
                          ["eps", "D", "D_forward", "D_backward",
                           "log10_eps", "log10_D"], rows)

    def stability_csvs(stat: dict, prefix=""):
        out = []
        reg = stat["regularity"]
        out.append(_write_csv(
            os.path.join(outdir, f"{prefix}regularity.csv"),
            ["phi_index", "value", "bound"],
            [[i, _fmt(v), _fmt(reg["bound"])]
             for i, v in enumerate(reg["per_phi"])]))
        dec = stat["decay"]
        rows = []
        if "skipped" not in dec:
            for i, delta in enumerate(dec["delta_list"]):
                for j, v in enumerate(dec["matrix"][i]):
                    rows.append([_fmt(delta), j, _fmt(v)])
        out.append(_write_csv(os.path.join(outdir, f"{prefix}decay.csv"),
                              ["delta", "family_index", "value"], rows))
        sp = stat["space_tightness"]
        out.append(_write_csv(
            os.path.join(outdir, f"{prefix}space_tightness.csv"),
            ["radius", "fraction"],
            [[_fmt(r), _fmt(fr)]
             for r, fr in zip(sp["radii"], sp["fractions"])]))
        tt = stat["time_tightness"]
        out.append(_write_csv(
            os.path.join(outdir, f"{prefix}time_tightness.csv"),
            ["threshold", "fraction"],
            [[_fmt(m), _fmt(fr)]
             for m, fr in zip(tt["thresholds"], tt["fractions"])]))
        lc = stat["limit_continuity"]
        out.append(_write_csv(
            os.path.join(outdir, f"{prefix}limit_continuity.csv"),
            ["family_index", "value"],
            [[i, _fmt(v)] for i, v in enumerate(lc["values"])]))
        out.append(_write_csv(
            os.path.join(outdir, f"{prefix}stability_gap.csv"),
            ["family_index", "value"],
            [[i, _fmt(v)] for i, v in enumerate(stat["gap_values"])]))
        return out

    name = record.config.experiment
    if name in ("semiclassical", "alpha1"):
        emit("D_vs_eps_loglog",
             "distance to the transported classical reference shrinks with "
             "the concentration scale (log-log trend)", d_vs_eps)
    if name == "semiclassical":
        def hyp():
            stats = _present(reports, "hypotheses")
            if stats is None:
                return None
            paths = []
            for direction, stat in sorted(stats.items()):
                paths.extend(stability_csvs(stat, prefix=f"{direction}_"))
            for q in paths[1:]:
                written.append(os.path.basename(q))
                readme.append((os.path.basename(q),
                               "stability-hypothesis statistic along the "
                               "concentration sweep"))
            return paths[0]
        emit("hypothesis_statistics",
             "stability-hypothesis statistic along the concentration sweep",
             hyp)
    if name == "alpha1":
        def t0fig():
            t0 = _present(reports, "t0_concentration")
            if t0 is None:
                return None
            return _write_csv(
                os.path.join(outdir, "t0_concentration.csv"),
                ["eps", "p_marginal_distance", "x_variance"],
                [[_fmt(e), _fmt(d), _fmt(v)]
                 for e, d, v in zip(t0["eps"], t0["p_marginal_distance"],
                                    t0["x_variance"])])
        emit("t0_concentration",
             "initial momentum profile locks onto the envelope spectrum "
             "while position variance vanishes", t0fig)
    if name == "stability-hypotheses":
        def stab():
            stat = _present(reports, "stability")
            if stat is None:
                return None
            paths = stability_csvs(stat)
            for q in paths[1:]:
                written.append(os.path.basename(q))
                readme.append((os.path.basename(q),
                               "stability-hypothesis statistic along the "
                               "jitter sweep"))
            return paths[0]
        emit("hypothesis_statistics",
             "stability-hypothesis statistic along the jitter sweep", stab)

        def levels():
            lev = _present(reports, "levels")
            if lev is None:
                return None
            return _write_csv(
                os.path.join(outdir, "gap_vs_jitter.csv"),
                ["jitter", "gap"],
                [[_fmt(s), _fmt(g)]
                 for s, g in zip(lev["jitter"], lev["gap"])])
        emit("gap_vs_jitter",
             "conclusion gap shrinks with the perturbation scale", levels)
    if name == "rlf-check":
        def dens():
            rep = _present(reports, "check_rlf")
            if rep is None:
                return None
            bound = rep["bound"] * (1.0 + rep["slack"])
            return _write_csv(
                os.path.join(outdir, "density_profile.csv"),
                ["t", "max_density", "bound"],
                [[_fmt(t), _fmt(v), _fmt(bound)]
                 for t, v in zip(rep["checked_times"], rep["per_time_max"])])
        emit("density_profile",
             "pushforward densities stay below the regularity bound at all "
             "checked times", dens)
    if name == "oracle-consistency":
        def oracles():
            entries = _present(reports, "oracles")
            if entries is None:
                return None
            return _write_csv(
                os.path.join(outdir, "oracle_table.csv"),
                ["name", "value", "threshold", "passed"],
                [[e["name"], _fmt(e.get("value", float("nan"))),
                  _fmt(e.get("threshold", float("nan"))),
                  int(e["passed"])] for e in entries])
        emit("oracle_table",
             "closed-form and symmetry oracles all hold at their stated "
             "tolerances", oracles)

    manifest_path = os.path.join(outdir, "plot_manifest.json")
    with open(manifest_path, "w") as f:
        json.dump({"schema": "rlflab.plot_manifest.v1",
                   "experiment": name, "written": sorted(set(written)),
                   "gaps": gaps}, f, indent=2, sort_keys=True)
        f.write("\n")
    if written:
        with open(os.path.join(outdir, "README.md"), "w") as f:
            f.write("# Plot data\n\nEach CSV backs one figure-level claim:\n\n")
            seen = set()
            for fname, claim in readme:
                if fname in seen:
                    continue
                seen.add(fname)
                f.write(f"- `{fname}`: {claim}.\n")
    return {"written": sorted(set(written)), "gaps": gaps,
            "manifest": manifest_path}


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rlf-lab",
        description="run registered flow/semiclassical experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="execute a config file")
    run_p.add_argument("config", help="JSON or YAML experiment config")
    sub.add_parser("list-experiments", help="show registered pipelines")
    emit_p = sub.add_parser("emit-plots",
                            help="write per-figure CSVs for a finished run")
    emit_p.add_argument("run_dir", help="directory holding run_record.json")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse exits on usage errors/help
        return 0 if exc.code in (0, None) else 1

    try:
        if args.command == "list-experiments":
            for name, desc in list_experiments():
                print(f"{name:22s} {desc}")
            return 0
        if args.command == "run":
            config = ExperimentConfig.load(args.config)
            record = run_experiment(config)
            for c in record.acceptance:
                status = "PASS" if c["passed"] else "FAIL"
                extra = ""
                if "value" in c and "threshold" in c:
                    extra = f"  (value {c['value']:.6g}, threshold {c['threshold']:.6g})"
                elif "error" in c:
                    extra = f"  ({c['error']})"
                print(f"[{status}] {c['name']}{extra}")
            print(f"run record: {os.path.join(record.output_dir, 'run_record.json')}")
            return 0 if record.passed else 2
        if args.command == "emit-plots":
            record = RunRecord.load(args.run_dir)
            out = emit_plotdata(record)
            for fname in out["written"]:
                print(f"wrote {fname}")
            for gap in out["gaps"]:
                print(f"gap: {gap['figure']} ({gap['reason']})")
            print(f"manifest: {out['manifest']}")
            return 0
        raise ValueError(f"unhandled command {args.command!r}")
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
