"""Experiment orchestration: configs, initial conditions, verification runs.

All Monte Carlo work is organised as replicate tasks with
scheduling-independent randomness: replicate i of a run draws from a Philox
stream keyed by (master_seed, purpose, K-index, i), so outputs are
byte-identical for a fixed seed regardless of worker count.

Statistical comparisons always use 3-standard-error bands computed from the
same samples; deterministic comparisons carry explicit tolerances.  Every
check becomes one row of a report with a machine-readable verdict.
"""

from __future__ import annotations

import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import __version__
from .measures import AtomicMeasure, GridDensity, TestFunction, make_panel, pair
from .rates import (AgeDensityRate, AgeProfile, ConstantRate, DensityRate, Kernel,
                    KernelRate, OffspringLaw, RateModel, ScalarFn)
from .branching import simulate
from .mvf import (LimitSolution, classical_exact, classical_pairing, logistic_exact,
                  solve_mvf, solve_total_ode)
from .spde import (classical_exp_mean, classical_mean_exact, classical_qv_mass,
                   covariation_integral_frames, density_dependent_exp_mean,
                   evolve_mean, ito_isometry_variance, noise_channel,
                   qv_integral_frames, remark_covariance_grid,
                   simulate_fluctuation_paths)
from .stats import (fit_loglog_slope, sample_summary, se_of_covariance,
                    se_of_variance)

__all__ = [
    "ExperimentConfig",
    "InitialCondition",
    "build_initial",
    "replicate_stream",
    "run_lln",
    "run_clt",
    "run_qv_check",
    "run_convergence",
    "run_simulate",
    "run_limit",
    "run_fluctuate",
    "CheckRow",
    "Report",
    "emit",
]

# purpose codes for stream derivation
PURPOSE_LLN = 1
PURPOSE_CLT = 2
PURPOSE_QV = 3
PURPOSE_SPDE = 4
PURPOSE_SIM = 5


def replicate_stream(master_seed: int, purpose: int, k_index: int,
                     replicate: int) -> np.random.Generator:
    """Counter-based stream for one replicate: Philox keyed by context."""
    sub = (np.uint64(purpose) << np.uint64(48)) \
        | (np.uint64(k_index) << np.uint64(32)) | np.uint64(replicate)
    key = np.array([np.uint64(master_seed), sub], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def spde_noise_stream(master_seed: int, block: int) -> np.random.Generator:
    """Per-block noise stream for grid paths (keyed derivation, fast generator).

    Grid paths burn an order of magnitude more variates than the event
    simulator, so they use SFC64 seeded from the (seed, purpose, block)
    context instead of Philox; derivation is still deterministic and
    scheduling-independent.
    """
    ss = np.random.SeedSequence(entropy=(int(master_seed), PURPOSE_SPDE, int(block)))
    return np.random.Generator(np.random.SFC64(ss))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    model: dict
    initial: dict
    horizon: float
    dt: float
    dt_out: float
    k_values: list[int]
    replicates: int
    seed: int
    perturbation: Optional[dict] = None
    panel: Optional[list[str]] = None
    n_spde_paths: int = 10_000
    spde_block: int = 2_500
    workers: int = 1
    emit_events: bool = False
    emit_fields: bool = False
    population_cap: int = 10 ** 7
    outdir: Optional[str] = None

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least 2 replicates")
        if any(int(k) <= 0 or int(k) != k for k in self.k_values):
            raise ValueError("K values must be positive integers")
        self.k_values = [int(k) for k in self.k_values]
        n = round(self.dt_out / self.dt)
        if abs(n * self.dt - self.dt_out) > 1e-9:
            raise ValueError("dt must divide dt_out")
        if abs(round(self.horizon / self.dt_out) * self.dt_out - self.horizon) > 1e-9:
            raise ValueError("dt_out must divide the horizon")

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "ExperimentConfig":
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def build_model(self) -> RateModel:
        return model_from_config(self.model)

    def build_panel(self, t_star: float) -> list[TestFunction]:
        return make_panel(self.panel, t_star=t_star)


def _scalar_fn(spec) -> ScalarFn:
    if isinstance(spec, (int, float)):
        return ScalarFn.constant(float(spec))
    kind = spec["kind"]
    if kind == "constant":
        return ScalarFn.constant(spec["c"])
    if kind == "affine":
        return ScalarFn.affine(spec["a"], spec["b"])
    raise ValueError(f"unknown scalar function kind {kind!r}")


def _age_profile(spec) -> AgeProfile:
    return AgeProfile(kind=spec["kind"], c=spec.get("c", 1.0),
                      alpha=spec.get("alpha", 0.0), center=spec.get("center", 0.0),
                      sigma=spec.get("sigma", 1.0))


def _offspring_law(spec) -> OffspringLaw:
    kind = spec["kind"]
    if kind == "deterministic":
        return OffspringLaw.deterministic(spec["k"])
    if kind == "poisson":
        return OffspringLaw.poisson(spec["mean"], spec.get("cap"))
    if kind == "two_point":
        return OffspringLaw.two_point(spec["p"], spec["k1"], spec["k2"])
    raise ValueError(f"unknown offspring law {kind!r}")


def _rate_fn(family: str, spec):
    if isinstance(spec, (int, float)):
        return ConstantRate(float(spec))
    if family == "density_dependent":
        return DensityRate(_scalar_fn(spec))
    if family == "age_density":
        return AgeDensityRate(_age_profile(spec["age"]), _scalar_fn(spec["mass"]))
    if family == "kernel_linear":
        kernel = Kernel(kind=spec["kernel"]["kind"], c=spec["kernel"].get("c", 1.0),
                        alpha=spec["kernel"].get("alpha", 1.0),
                        sigma=spec["kernel"].get("sigma", 1.0))
        age = _age_profile(spec["age"]) if "age" in spec else None
        params = {p: spec[p] for p in ("c0", "cy", "cz", "d0", "d1", "c") if p in spec}
        return KernelRate(kernel, spec["phi"], age=age, **params)
    raise ValueError(f"unknown model family {family!r}")


def model_from_config(spec: dict) -> RateModel:
    family = spec["family"]
    birth = _rate_fn(family, spec["birth"])
    death = _rate_fn(family, spec["death"])
    birth_sup = spec.get("birth_sup")
    death_sup = spec.get("death_sup")
    if birth_sup is None:
        if not isinstance(birth, ConstantRate):
            raise ValueError("birth_sup is required for population-dependent rates")
        birth_sup = birth.value
    if death_sup is None:
        if not isinstance(death, ConstantRate):
            raise ValueError("death_sup is required for population-dependent rates")
        death_sup = death.value
    return RateModel(
        family=family, birth=birth, death=death,
        life_law=_offspring_law(spec["life_law"]),
        split_law=_offspring_law(spec["split_law"]),
        birth_sup=float(birth_sup), death_sup=float(death_sup),
    )


# ---------------------------------------------------------------------------
# initial conditions


class _GridBase:
    def __init__(self, grid: GridDensity):
        self.grid = grid

    def pair(self, f):
        return pair(f, self.grid)

    @property
    def mass(self):
        return self.grid.mass


class _AtomBase:
    def __init__(self, ages: np.ndarray, masses: np.ndarray):
        self.ages = ages
        self.masses = masses

    def pair(self, f):
        return float(np.dot(np.asarray(f(self.ages), dtype=float), self.masses))

    @property
    def mass(self):
        return float(self.masses.sum())


@dataclass(frozen=True)
class InitialFluctuation:
    """Exact pairing oracle for sqrt(K) * (realised empirical - target)."""

    empirical: AtomicMeasure       # weight 1/K
    base: Union[_GridBase, _AtomBase]
    scale: float

    def pair(self, f) -> float:
        return self.scale * (pair(f, self.empirical) - self.base.pair(f))

    @property
    def mass(self) -> float:
        return self.scale * (self.empirical.mass - self.base.mass)


@dataclass(frozen=True)
class InitialCondition:
    atoms: AtomicMeasure                 # unit weight, the raw population
    k: int
    t_star: float
    a_star_cells: int
    base_grid: Optional[GridDensity]     # target density on the solver grid
    z0: InitialFluctuation
    nu0_values: Optional[np.ndarray]     # realised fluctuation density (grid kind)


def largest_remainder_counts(masses: np.ndarray) -> np.ndarray:
    """Integer counts with the same total as ``masses`` (largest remainder).

    Deterministic: ties are broken toward lower indices.
    """
    masses = np.asarray(masses, dtype=float)
    if masses.size and masses.min() < -1e-9:
        raise ValueError("negative target count: infeasible for this K")
    masses = np.maximum(masses, 0.0)
    total = int(round(masses.sum()))
    floors = np.floor(masses + 1e-12).astype(np.int64)
    deficit = total - int(floors.sum())
    if deficit > 0:
        rem = masses - floors
        order = np.argsort(-rem, kind="stable")
        floors[order[:deficit]] += 1
    return floors


def _grid_cell_masses(spec: dict, n_cells: int, dx: float) -> np.ndarray:
    profile = spec.get("profile", "uniform")
    centers = (np.arange(n_cells) + 0.5) * dx
    if profile == "uniform":
        lo, hi = spec["support"]
        mass = float(spec.get("mass", 1.0))
        inside = (centers > lo) & (centers < hi)
        if not inside.any():
            raise ValueError("uniform support contains no grid cells")
        density = mass / (hi - lo)
        out = np.zeros(n_cells)
        out[inside] = density * dx
        return out
    raise ValueError(f"unknown grid profile {profile!r}")


def _spec_extent(spec: Optional[dict]) -> float:
    if spec is None:
        return 0.0
    if spec["kind"] == "grid":
        return float(spec["support"][1])
    return float(max(spec["ages"])) if spec["ages"] else 0.0


def build_initial(initial: dict, perturbation: Optional[dict], k: int,
                  dx: float, horizon: float) -> InitialCondition:
    """Realise K * base + sqrt(K) * perturbation as unit-weight atoms.

    Grid-kind targets put atoms at cell centers with largest-remainder
    counts per cell; atom-kind targets round per distinct age.  The
    fluctuation start is defined exactly from the realised atoms, so the
    scaled-deviation identity holds by construction; its panel pairings are
    reported, not prescribed.
    """
    extent = max(_spec_extent(initial), _spec_extent(perturbation))
    n_room = max(1, int(math.ceil(extent / dx - 1e-9)))
    n_steps = int(round(horizon / dx))
    if abs(n_steps * dx - horizon) > 1e-9:
        raise ValueError("horizon must be a multiple of the grid spacing")
    n_cells = n_steps + n_room
    t_star = n_cells * dx
    sqrt_k = math.sqrt(k)

    if initial["kind"] == "grid":
        base_cells = _grid_cell_masses(initial, n_cells, dx)
        target = k * base_cells.copy()
        if perturbation is not None:
            if perturbation["kind"] == "grid":
                target += sqrt_k * _grid_cell_masses(perturbation, n_cells, dx)
            else:
                extra_ages = np.asarray(perturbation["ages"], dtype=float)
                extra_masses = sqrt_k * np.asarray(perturbation["masses"], dtype=float)
                if extra_masses.min() < 0:
                    raise ValueError("atom perturbation on a grid base must be nonnegative")
                counts = largest_remainder_counts(extra_masses)
                pert_ages = np.repeat(extra_ages, counts)
        counts_grid = largest_remainder_counts(target)
        centers = (np.arange(n_cells) + 0.5) * dx
        ages = np.repeat(centers, counts_grid)
        if perturbation is not None and perturbation["kind"] == "atoms":
            ages = np.concatenate([ages, pert_ages])
        base = _GridBase(GridDensity(dx=dx, values=base_cells / dx))
        base_grid = base.grid
        empirical = AtomicMeasure(ages=np.sort(ages), weight=1.0 / k, t_star=t_star)
        nu0 = sqrt_k * (np.bincount(
            np.minimum((np.sort(ages) / dx).astype(int), n_cells - 1),
            minlength=n_cells).astype(float) / (k * dx) - base_grid.values)
    else:
        base_ages = np.asarray(initial["ages"], dtype=float)
        base_masses = np.asarray(initial["masses"], dtype=float)
        ages_all = list(base_ages)
        target = list(k * base_masses)
        if perturbation is not None:
            if perturbation["kind"] != "atoms":
                raise ValueError("grid perturbation needs a grid-kind base")
            for a, m in zip(perturbation["ages"], perturbation["masses"]):
                if a in ages_all:
                    target[ages_all.index(a)] += sqrt_k * m
                else:
                    ages_all.append(float(a))
                    target.append(sqrt_k * m)
        counts = largest_remainder_counts(np.array(target))
        ages = np.repeat(np.array(ages_all), counts)
        base = _AtomBase(base_ages, base_masses)
        base_grid = None
        empirical = AtomicMeasure(ages=np.sort(ages), weight=1.0 / k, t_star=t_star)
        nu0 = None

    atoms = AtomicMeasure(ages=empirical.ages, weight=1.0, t_star=t_star)
    z0 = InitialFluctuation(empirical=empirical, base=base, scale=sqrt_k)
    return InitialCondition(atoms=atoms, k=k, t_star=t_star, a_star_cells=n_room,
                            base_grid=base_grid, z0=z0, nu0_values=nu0)


def background_solution(config: ExperimentConfig, model: RateModel) -> LimitSolution:
    """Solve the deterministic limit from the configured target density."""
    init = build_initial(config.initial, config.perturbation, k=max(config.k_values),
                         dx=config.dt, horizon=config.horizon)
    if init.base_grid is None:
        # atomic target: mollify onto the grid (cell-averaged)
        vals = np.zeros(int(round(init.t_star / config.dt)))
        base: _AtomBase = init.z0.base  # type: ignore[assignment]
        for a, m in zip(base.ages, base.masses):
            j = min(int(a / config.dt), vals.size - 1)
            vals[j] += m / config.dt
        a0 = GridDensity(dx=config.dt, values=vals)
    else:
        a0 = init.base_grid
    return solve_mvf(model, a0, config.horizon, config.dt)


# ---------------------------------------------------------------------------
# reports


@dataclass
class CheckRow:
    stat: str
    value: float
    target: float
    tolerance: float
    passed: bool
    k: Optional[int] = None
    t: Optional[float] = None
    f_id: str = ""

    @staticmethod
    def band(stat: str, value: float, target: float, tolerance: float,
             k=None, t=None, f_id="") -> "CheckRow":
        return CheckRow(stat=stat, value=float(value), target=float(target),
                        tolerance=float(tolerance),
                        passed=bool(abs(value - target) <= tolerance),
                        k=k, t=t, f_id=f_id)


@dataclass
class Report:
    name: str
    rows: list[CheckRow] = field(default_factory=list)
    samples: list[tuple] = field(default_factory=list)   # (K, replicate, t, f_id, value)
    tables: dict = field(default_factory=dict)           # name -> (header, rows)
    notes: list[str] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failure_rate_note(self):
        n = len(self.rows)
        fails = sum(not r.passed for r in self.rows)
        if n and fails / n > 0.05:
            self.notes.append(
                f"family-level: {fails}/{n} checks failed (>5%); "
                "exceeds the expected false-positive budget"
            )


# ---------------------------------------------------------------------------
# replicate execution


def _map_tasks(fn: Callable, tasks: list, workers: int) -> list:
    if workers <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def _sim_task(args):
    """One replicate: returns panel pairings (and martingale values) at out times."""
    (cfg_dict, k_index, k, rep, purpose, with_ledger) = args
    config = ExperimentConfig(**cfg_dict)
    model = config.build_model()
    init = build_initial(config.initial, config.perturbation, k, config.dt,
                         config.horizon)
    panel = config.build_panel(init.t_star)
    rng = replicate_stream(config.seed, purpose, k_index, rep)
    traj = simulate(model, init.atoms, k, config.horizon, config.dt_out, rng,
                    panel=panel, with_ledger=with_ledger,
                    population_cap=config.population_cap, t_star=init.t_star)
    if not traj.check_mass_bookkeeping():
        raise AssertionError(f"mass bookkeeping failed in replicate {rep} at K={k}")
    pairings = np.array([[pair(f, snap) for f in panel] for snap in traj.snapshots])
    mart = traj.ledger.martingales() if with_ledger else None
    return pairings, mart


def _run_replicates(config: ExperimentConfig, k_index: int, k: int, purpose: int,
                    with_ledger: bool, workers: int):
    tasks = [(config.to_dict(), k_index, k, rep, purpose, with_ledger)
             for rep in range(config.replicates)]
    return _map_tasks(_sim_task, tasks, workers)


# ---------------------------------------------------------------------------
# targets


def _is_classical(model: RateModel) -> bool:
    return isinstance(model.birth, ConstantRate) and isinstance(model.death, ConstantRate)


def _limit_pairing_fn(config: ExperimentConfig, model: RateModel,
                      background: Optional[LimitSolution]):
    """Best available (f, limit measure at t) oracle for the configured model."""
    if _is_classical(model):
        init = build_initial(config.initial, config.perturbation,
                             k=max(config.k_values), dx=config.dt,
                             horizon=config.horizon)
        b = model.birth.value
        h = model.death.value
        sm, lm = model.split_law.mean, model.life_law.mean
        if init.base_grid is not None:
            a0 = init.base_grid

            def fn(f, t):
                return classical_pairing(f, a0, b, h, sm, lm, t)
        else:
            base: _AtomBase = init.z0.base  # type: ignore[assignment]
            x0 = base.mass
            n = b * lm + h * sm

            def fn(f, t):
                surv = math.exp(-h * t) * float(
                    np.dot(np.asarray(f(base.ages + t), dtype=float), base.masses))
                if t <= 0:
                    return surv
                from scipy.integrate import quad
                renew, _ = quad(lambda x: float(f(np.array(x))) * n * x0
                                * math.exp((n - h) * (t - x)) * math.exp(-h * x),
                                0.0, t, limit=200)
                return surv + renew
        return fn

    assert background is not None

    def fn(f, t):
        return pair(f, background.frame_at(t))

    return fn


# ---------------------------------------------------------------------------
# verification runs


def run_lln(config: ExperimentConfig, workers: Optional[int] = None) -> Report:
    """Replicate means of (f, empirical measure) against the deterministic limit.

    Reports per-(K, t, f) mean checks at 3 standard errors and, per f, the
    log-log slope of the root-mean-square deviation against K, which the
    scaled-fluctuation limit predicts to sit near -1/2.
    """
    workers = config.workers if workers is None else workers
    model = config.build_model()
    background = None if _is_classical(model) else background_solution(config, model)
    target_of = _limit_pairing_fn(config, model, background)

    init0 = build_initial(config.initial, config.perturbation,
                          k=max(config.k_values), dx=config.dt, horizon=config.horizon)
    panel = config.build_panel(init0.t_star)
    out_times = np.arange(int(round(config.horizon / config.dt_out)) + 1) * config.dt_out

    report = Report(name="lln")
    targets = {(ti, fi): target_of(f, float(t))
               for ti, t in enumerate(out_times) for fi, f in enumerate(panel)}
    rms_by_f = {f.label: [] for f in panel}
    for k_index, k in enumerate(config.k_values):
        results = _run_replicates(config, k_index, k, PURPOSE_LLN, False, workers)
        arr = np.stack([p for p, _ in results])        # (M, n_out, P)
        for rep in range(arr.shape[0]):
            for ti, t in enumerate(out_times):
                for fi, f in enumerate(panel):
                    report.samples.append((k, rep, float(t), f.label, arr[rep, ti, fi]))
        for ti, t in enumerate(out_times):
            if t == 0.0:
                continue
            for fi, f in enumerate(panel):
                target = targets[(ti, fi)]
                s = sample_summary(arr[:, ti, fi])
                report.rows.append(CheckRow.band(
                    "lln_mean", s.mean, target, 3.0 * s.se_mean,
                    k=k, t=float(t), f_id=f.label))
                if abs(float(t) - config.horizon) < 1e-12:
                    rms = float(np.sqrt(np.mean((arr[:, ti, fi] - target) ** 2)))
                    rms_by_f[f.label].append(rms)

    slope_rows = []
    for f in panel:
        errs = np.array(rms_by_f[f.label])
        if len(config.k_values) >= 2 and np.all(errs > 0):
            slope = fit_loglog_slope(np.array(config.k_values, dtype=float), errs)
            report.rows.append(CheckRow.band(
                "lln_slope", slope, -0.5, 0.15, t=config.horizon, f_id=f.label))
            for k, e in zip(config.k_values, errs):
                slope_rows.append((k, config.horizon, f.label, e))
    report.tables["lln_rms"] = (("K", "t", "f_id", "rms_error"), slope_rows)
    report.failure_rate_note()
    return report


def run_qv_check(config: ExperimentConfig, workers: Optional[int] = None) -> Report:
    """Martingale mean-zero, variance-vs-QV and pairwise covariation checks."""
    workers = config.workers if workers is None else workers
    model = config.build_model()
    init0 = build_initial(config.initial, config.perturbation,
                          k=max(config.k_values), dx=config.dt, horizon=config.horizon)
    panel = config.build_panel(init0.t_star)
    background = background_solution(config, model)
    t_end = config.horizon
    report = Report(name="qv")

    qv_targets = []
    for f in panel:
        if _is_classical(model) and f.kind == "constant" and f.c == 1.0:
            qv_targets.append(classical_qv_mass(
                init0.z0.base.mass, model.birth.value, model.death.value,
                model.life_law, model.split_law, t_end))
        else:
            qv_targets.append(qv_integral_frames(model, background, f, t_end))

    for k_index, k in enumerate(config.k_values):
        results = _run_replicates(config, k_index, k, PURPOSE_QV, True, workers)
        mart_t = np.stack([m[-1] for _, m in results]) / math.sqrt(k)  # (M, P)
        for rep in range(mart_t.shape[0]):
            for fi, f in enumerate(panel):
                report.samples.append((k, rep, t_end, "M~:" + f.label, mart_t[rep, fi]))
        for fi, f in enumerate(panel):
            s = sample_summary(mart_t[:, fi])
            report.rows.append(CheckRow.band(
                "mart_mean", s.mean, 0.0, 3.0 * s.se_mean, k=k, t=t_end, f_id=f.label))
            report.rows.append(CheckRow.band(
                "mart_var_vs_qv", s.var, qv_targets[fi], 3.0 * s.se_var,
                k=k, t=t_end, f_id=f.label))
        cov_rows = []
        for fi in range(len(panel)):
            for gi in range(fi + 1, len(panel)):
                cov = float(np.cov(mart_t[:, fi], mart_t[:, gi], ddof=1)[0, 1])
                target = covariation_integral_frames(model, background,
                                                     panel[fi], panel[gi], t_end)
                se = se_of_covariance(mart_t[:, fi], mart_t[:, gi])
                report.rows.append(CheckRow.band(
                    "mart_covariation", cov, target, 3.0 * se, k=k, t=t_end,
                    f_id=f"{panel[fi].label}&{panel[gi].label}"))
                cov_rows.append((k, panel[fi].label, panel[gi].label, cov, target))
        report.tables["qv_covariation"] = (
            ("K", "f_id", "g_id", "covariance", "target"), cov_rows)
    report.failure_rate_note()
    return report


def run_clt(config: ExperimentConfig, workers: Optional[int] = None) -> Report:
    """Fluctuation means, variances and Gaussianity against the limit laws."""
    workers = config.workers if workers is None else workers
    model = config.build_model()
    classical = _is_classical(model)
    background = background_solution(config, model)
    target_of = _limit_pairing_fn(config, model, background)
    t_end = config.horizon
    report = Report(name="clt")

    k_max = max(config.k_values)
    inits = {k: build_initial(config.initial, config.perturbation, k,
                              config.dt, config.horizon) for k in config.k_values}
    panel = config.build_panel(inits[k_max].t_star)
    limit_at_t = {f.label: target_of(f, t_end) for f in panel}

    # mean targets from the realised fluctuation starts
    lm, sm = model.life_law.mean, model.split_law.mean
    mean_targets: dict[tuple[int, str], Optional[float]] = {}
    for k, init in inits.items():
        z0_mass = init.z0.mass
        for f in panel:
            z0f = init.z0.pair(f)
            if classical and f.kind in ("constant", "exp"):
                lam = 0.0 if f.kind == "constant" else f.lam
                scalefac = f.c if f.kind == "constant" else 1.0
                mean_targets[(k, f.label)] = scalefac * classical_exp_mean(
                    lam, z0f / scalefac if scalefac else 0.0, z0_mass,
                    model.birth.value, model.death.value, sm, lm, t_end)
            elif model.family == "density_dependent" and f.kind in ("constant", "exp"):
                lam = 0.0 if f.kind == "constant" else f.lam
                mean_targets[(k, f.label)] = density_dependent_exp_mean(
                    lam, z0f, z0_mass, model, background, t_end)
            else:
                mean_targets[(k, f.label)] = None

    # grid mean evolution from the realised start (grid-kind bases only)
    nu0 = inits[k_max].nu0_values
    mean_path = None
    if nu0 is not None:
        mean_path = evolve_mean(model, nu0, background)
        for f in panel:
            if mean_targets[(k_max, f.label)] is None:
                mean_targets[(k_max, f.label)] = float(mean_path.pairings(f)[-1])
        if classical:
            z0_grid = GridDensity(dx=config.dt, values=nu0, signed=True)
            exact_grid = classical_mean_exact(
                z0_grid, model.birth.value, model.death.value, sm, lm,
                inits[k_max].z0.mass, t_end)
            linf = float(np.max(np.abs(mean_path.values[-1] - exact_grid.values)))
            report.rows.append(CheckRow.band(
                "evolve_mean_linf", linf, 0.0, 5.0 * config.dt, t=t_end))

    # SPDE path study at the finest grid
    spde_var: dict[str, float] = {}
    spde_se: dict[str, float] = {}
    if nu0 is not None:
        def spde_stream(block: int) -> np.random.Generator:
            return spde_noise_stream(config.seed, block)

        path_samples = simulate_fluctuation_paths(
            model, background, nu0, config.n_spde_paths, panel, [t_end],
            spde_stream, block_size=config.spde_block)
        spde_rows = []
        for fi, f in enumerate(panel):
            vals = path_samples[:, 0, fi]
            spde_var[f.label] = float(np.var(vals, ddof=1))
            spde_se[f.label] = se_of_variance(vals)
            spde_rows.append((t_end, f.label, float(vals.mean()),
                              spde_var[f.label], vals.size))
            if classical and f.kind in ("constant", "exp"):
                lam = 0.0 if f.kind == "constant" else f.lam
                oracle = ito_isometry_variance(
                    lam, inits[k_max].base_grid, model.birth.value,
                    model.death.value, model.life_law, model.split_law, t_end)
                oracle *= (f.c ** 2) if f.kind == "constant" else 1.0
                report.rows.append(CheckRow.band(
                    "spde_var_vs_oracle", spde_var[f.label], oracle,
                    3.0 * spde_se[f.label], t=t_end, f_id=f.label))
        report.tables["spde_path_stats"] = (
            ("t", "f_id", "mean", "var", "n_paths"), spde_rows)

    for k_index, k in enumerate(config.k_values):
        results = _run_replicates(config, k_index, k, PURPOSE_CLT, False, workers)
        arr = np.stack([p for p, _ in results])  # (M, n_out, P)
        sqrt_k = math.sqrt(k)
        for fi, f in enumerate(panel):
            z_samples = sqrt_k * (arr[:, -1, fi] - limit_at_t[f.label])
            for rep, v in enumerate(z_samples):
                report.samples.append((k, rep, t_end, "Z:" + f.label, v))
            s = sample_summary(z_samples)
            target = mean_targets[(k, f.label)]
            if target is not None:
                report.rows.append(CheckRow.band(
                    "clt_mean", s.mean, target, 3.0 * s.se_mean,
                    k=k, t=t_end, f_id=f.label))
            if k == k_max:
                if f.label in spde_var:
                    report.rows.append(CheckRow.band(
                        "clt_var_vs_spde", s.var, spde_var[f.label],
                        0.10 * abs(spde_var[f.label]), k=k, t=t_end, f_id=f.label))
                report.rows.append(CheckRow(
                    stat="clt_jarque_bera_p", value=s.jb_pvalue, target=1.0,
                    tolerance=0.01, passed=bool(s.jb_pvalue > 0.01),
                    k=k, t=t_end, f_id=f.label))
    report.failure_rate_note()
    return report


def run_convergence(config: ExperimentConfig, workers: Optional[int] = None) -> Report:
    """Refinement studies for the solvers plus the noise-construction identity."""
    report = Report(name="convergence")

    # transport-only: exact shift
    dt0 = 4e-3
    a0 = GridDensity.from_function(
        lambda x: np.where(x < 1.0, 1.0, 0.0), t_star=1.5, dx=dt0)
    from .rates import classical_model
    transport = classical_model(0.0, 0.0, OffspringLaw.deterministic(0),
                                OffspringLaw.deterministic(0))
    sol = solve_mvf(transport, a0, 0.5, dt0)
    shift_err = float(np.max(np.abs(
        sol.values[-1][int(round(0.5 / dt0)):]
        - a0.values[: a0.n_cells - int(round(0.5 / dt0))])))
    report.rows.append(CheckRow.band("transport_exact", shift_err, 0.0, 1e-12))

    # limit-solver order against the constant-parameter closed form
    study = classical_model(0.0, 1.0, OffspringLaw.deterministic(0),
                            OffspringLaw.deterministic(2))
    dts = [4e-3, 2e-3, 1e-3]
    errs = []
    for dt in dts:
        a0 = GridDensity.from_function(
            lambda x: np.where(x < 1.0, 1.0, 0.0), t_star=1.5, dx=dt)
        sol = solve_mvf(study, a0, 0.5, dt)
        ref = classical_exact(a0, 0.0, 1.0, 2.0, 0.0, 0.5)
        errs.append(float(np.max(np.abs(sol.values[-1] - ref.values))))
    conv_rows = [("solve_mvf", dt, e) for dt, e in zip(dts, errs)]
    for i in range(len(dts) - 1):
        report.rows.append(CheckRow.band(
            "solve_mvf_order_ratio", errs[i] / errs[i + 1], 2.0, 0.4))

    # total-mass RK4 order against the logistic closed form
    logistic = RateModel(
        family="density_dependent",
        birth=ConstantRate(0.0),
        death=DensityRate(ScalarFn.affine(1.0, -1.0)),
        life_law=OffspringLaw.deterministic(0),
        split_law=OffspringLaw.deterministic(2),
        birth_sup=0.0, death_sup=1.0)
    ode_dts = [0.2, 0.1, 0.05]
    ode_errs = []
    for dt in ode_dts:
        _, xs = solve_total_ode(logistic, 0.5, 1.0, dt)
        ode_errs.append(abs(xs[-1] - float(logistic_exact(0.5, 1.0))))
    conv_rows += [("solve_total_ode", dt, e) for dt, e in zip(ode_dts, ode_errs)]
    for i in range(len(ode_dts) - 1):
        report.rows.append(CheckRow.band(
            "total_ode_order_ratio", ode_errs[i] / ode_errs[i + 1], 16.0, 4.0))

    # fluctuation-mean order (generic constants where the scheme is first order)
    gen = classical_model(0.6, 0.7, OffspringLaw.deterministic(1),
                          OffspringLaw.deterministic(2))
    em_errs = []
    for dt in dts:
        a0 = GridDensity.from_function(
            lambda x: np.where(x < 1.0, 1.0, 0.0), t_star=2.0, dx=dt)
        bg = solve_mvf(gen, a0, 1.0, dt)
        z0 = np.where(a0.centers < 1.0, 1.0, 0.0)
        mp = evolve_mean(gen, z0, bg)
        ref = classical_mean_exact(GridDensity(dx=dt, values=z0, signed=True),
                                   0.6, 0.7, 2.0, 1.0, 1.0, 1.0)
        em_errs.append(float(np.max(np.abs(mp.values[-1] - ref.values))))
    conv_rows += [("evolve_mean", dt, e) for dt, e in zip(dts, em_errs)]
    for i in range(len(dts) - 1):
        report.rows.append(CheckRow.band(
            "evolve_mean_order_ratio", em_errs[i] / em_errs[i + 1], 2.0, 0.4))
    report.tables["convergence"] = (("study", "dt", "linf_error"), conv_rows)

    # noise construction: analytic identity and empirical covariance
    model = config.build_model()
    background = background_solution(config, model)
    mid = background.values.shape[0] // 2
    frame = background.frame(mid)
    panel = config.build_panel(background.t_star)
    chan = noise_channel(model, frame, config.dt)
    fvals = [np.asarray(f(frame.centers), dtype=float) for f in panel]
    worst = 0.0
    for fi in range(len(panel)):
        for gi in range(fi, len(panel)):
            built = chan.functional_covariance(fvals[fi], fvals[gi])
            target = remark_covariance_grid(model, frame, fvals[fi], fvals[gi],
                                            config.dt)
            scale = max(abs(target), 1e-14)
            worst = max(worst, abs(built - target) / scale)
    report.rows.append(CheckRow.band("noise_cov_identity_rel", worst, 0.0, 1e-10))

    rng = replicate_stream(config.seed, PURPOSE_SPDE, 1, 0)
    n_draw = 10 ** 5
    n_check = min(3, len(panel))
    functionals = np.empty((n_draw, n_check))
    pos = 0
    while pos < n_draw:
        m = min(5000, n_draw - pos)
        deaths = rng.standard_normal((m, frame.n_cells)) * chan.sigma_cells
        births = chan.split_mean * deaths.sum(axis=1) \
            + chan.sigma_boundary * rng.standard_normal(m)
        for fi in range(n_check):
            functionals[pos:pos + m, fi] = fvals[fi][0] * births - deaths @ fvals[fi]
        pos += m
    for fi in range(n_check):
        for gi in range(fi, n_check):
            nf, ng = functionals[:, fi], functionals[:, gi]
            cov = float(np.cov(nf, ng, ddof=1)[0, 1])
            target = chan.functional_covariance(fvals[fi], fvals[gi])
            se = se_of_covariance(nf, ng)
            report.rows.append(CheckRow.band(
                "noise_cov_empirical", cov, target, 3.0 * se,
                f_id=f"{panel[fi].label}&{panel[gi].label}"))
    report.failure_rate_note()
    return report


# ---------------------------------------------------------------------------
# plain runs (CLI surfaces)


def run_simulate(config: ExperimentConfig, outdir: Optional[Path] = None,
                 workers: Optional[int] = None) -> Report:
    """Simulate replicates and emit snapshot pairings (and optional event logs)."""
    workers = config.workers if workers is None else workers
    model = config.build_model()
    report = Report(name="simulate")
    out_times = np.arange(int(round(config.horizon / config.dt_out)) + 1) * config.dt_out
    for k_index, k in enumerate(config.k_values):
        init = build_initial(config.initial, config.perturbation, k, config.dt,
                             config.horizon)
        panel = config.build_panel(init.t_star)
        if (config.emit_events or config.emit_fields) and outdir is not None:
            for rep in range(config.replicates):
                rng = replicate_stream(config.seed, PURPOSE_SIM, k_index, rep)
                traj = simulate(model, init.atoms, k, config.horizon, config.dt_out,
                                rng, panel=panel, log_events=config.emit_events,
                                with_ledger=config.emit_fields,
                                population_cap=config.population_cap,
                                t_star=init.t_star)
                if config.emit_events:
                    traj.events.to_csv(outdir / f"events_K{k}_r{rep}.csv")
                if config.emit_fields:
                    traj.snapshots[-1].to_csv(outdir / f"snapshot_K{k}_r{rep}.csv")
                    traj.ledger.to_csv(outdir / f"ledger_K{k}_r{rep}.csv")
                arr = np.array([[pair(f, s) for f in panel] for s in traj.snapshots])
                for ti, t in enumerate(out_times):
                    for fi, f in enumerate(panel):
                        report.samples.append((k, rep, float(t), f.label, arr[ti, fi]))
        else:
            results = _run_replicates(config, k_index, k, PURPOSE_SIM, False, workers)
            for rep, (arr, _) in enumerate(results):
                for ti, t in enumerate(out_times):
                    for fi, f in enumerate(panel):
                        report.samples.append((k, rep, float(t), f.label, arr[ti, fi]))
    return report


def run_limit(config: ExperimentConfig, outdir: Optional[Path] = None) -> Report:
    model = config.build_model()
    sol = background_solution(config, model)
    report = Report(name="limit")
    rows = [(float(t), float(x)) for t, x in zip(sol.times, sol.totals)]
    report.tables["totals"] = (("t", "X"), rows)
    if outdir is not None:
        every = int(round(config.dt_out / config.dt))
        for i in range(0, sol.times.size, every):
            sol.frame(i).to_csv(outdir / f"limit_frame_t{sol.times[i]:.6g}.csv")
    return report


def run_fluctuate(config: ExperimentConfig, outdir: Optional[Path] = None) -> Report:
    model = config.build_model()
    background = background_solution(config, model)
    k_max = max(config.k_values)
    init = build_initial(config.initial, config.perturbation, k_max, config.dt,
                         config.horizon)
    if init.nu0_values is None:
        raise ValueError("fluctuation paths need a grid-kind initial target")
    panel = config.build_panel(init.t_star)
    record = [i * config.dt_out for i in
              range(int(round(config.horizon / config.dt_out)) + 1)]

    def spde_stream(block: int) -> np.random.Generator:
        return spde_noise_stream(config.seed, block)

    samples = simulate_fluctuation_paths(model, background, init.nu0_values,
                                         config.n_spde_paths, panel, record,
                                         spde_stream, block_size=config.spde_block)
    report = Report(name="fluctuate")
    rows = []
    for ri, t in enumerate(record):
        for fi, f in enumerate(panel):
            vals = samples[:, ri, fi]
            rows.append((float(t), f.label, float(vals.mean()),
                         float(np.var(vals, ddof=1)), vals.size))
    report.tables["path_stats"] = (("t", "f_id", "mean", "var", "n_paths"), rows)
    if config.emit_fields and outdir is not None:
        mp = evolve_mean(model, init.nu0_values, background)
        every = int(round(config.dt_out / config.dt))
        for i in range(0, mp.times.size, every):
            mp.frame(i).to_csv(outdir / f"mean_field_t{mp.times[i]:.6g}.csv")
    return report


# ---------------------------------------------------------------------------
# emission


def emit(report: Report, outdir: Union[str, Path], config: Optional[ExperimentConfig] = None,
         wall_clock_s: Optional[float] = None) -> Path:
    """Write manifest, summary, samples and tidy plot tables.

    ``summary.csv`` and ``samples.csv`` are byte-identical across reruns for
    a fixed seed and worker count; the manifest carries timing metadata and
    is exempt from that guarantee.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    import numpy
    import scipy

    manifest = {
        "report": report.name,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "seed": config.seed if config else None,
        "config": config.to_dict() if config else None,
        "wall_clock_s": wall_clock_s,
        "all_passed": report.all_passed,
        "notes": report.notes,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2))

    with (outdir / "summary.csv").open("w") as fh:
        fh.write("K,t,f_id,stat,value,target,tolerance,pass\n")
        for r in report.rows:
            k = "" if r.k is None else r.k
            t = "" if r.t is None else repr(float(r.t))
            fh.write(f"{k},{t},{r.f_id},{r.stat},{r.value!r},{r.target!r},"
                     f"{r.tolerance!r},{str(r.passed).lower()}\n")

    with (outdir / "samples.csv").open("w") as fh:
        fh.write("K,replicate,t,f_id,value\n")
        for k, rep, t, f_id, v in report.samples:
            fh.write(f"{k},{rep},{float(t)!r},{f_id},{float(v)!r}\n")

    plotdir = outdir / "plotdata"
    plotdir.mkdir(exist_ok=True)
    for name, (header, rows) in report.tables.items():
        with (plotdir / f"{name}.csv").open("w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(
                    repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                    for v in row) + "\n")
    return outdir
