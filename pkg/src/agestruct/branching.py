"""Exact event-driven simulation of the finite-K age-structured population.

Individuals age at unit rate; an individual of age x gives birth at the
model's per-capita birth rate and dies at its death rate, both of which may
depend on the whole (normalised) population measure.  Event times are drawn
by thinning against the global bound N * (birth_sup + death_sup), re-chosen
after every candidate, which is exact for state-dependent intensities:
rejected candidates still advance time, so ages drift and rates are
re-evaluated at each candidate epoch.

The simulator optionally maintains, for a panel of test functions, the
compensated jump processes ("martingale ledger"): jumps are applied exactly
at event times and the absolutely continuous compensator is integrated with
fixed-order Gauss-Legendre quadrature over each interval on which the live
set is constant (the integrand is smooth there, ages being linear in time).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .measures import AtomicMeasure, TestFunction
from .rates import ModelError, RateModel

__all__ = [
    "CapacityError",
    "Population",
    "Event",
    "next_event",
    "MartingaleLedger",
    "EventLog",
    "Trajectory",
    "simulate",
    "TwoVarFunction",
    "two_var",
    "pathwise_identity_catalogue",
    "check_pathwise_identity",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)

KIND_BIRTH = 0
KIND_DEATH = 1


class CapacityError(RuntimeError):
    """The live population exceeded the configured cap."""


class Population:
    """Mutable live population: birth times, counters and death log.

    Ages are implicit (age = t - birth_time) so that aging between events is
    free.  The object doubles as the measure view handed to rate functions:
    it exposes the normalised total mass and kernel pairings of A_t / k.
    """

    def __init__(self, ages: Sequence[float], k: int, t0: float = 0.0):
        ages = np.asarray(ages, dtype=float)
        cap = max(64, 2 * ages.size)
        self.birth_times = np.empty(cap, dtype=float)
        self.birth_times[: ages.size] = t0 - ages
        self.n_live = int(ages.size)
        self.k = int(k)
        self.t = float(t0)
        self.initial_count = int(ages.size)
        self.births_life = 0
        self.births_split = 0
        self.deaths = 0
        self.death_ages: list[float] = []
        self.death_times: list[float] = []

    # -- measure-view protocol used by rate evaluation --------------------
    @property
    def mass(self) -> float:
        return self.n_live / self.k

    def kernel_pair(self, kernel, xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        if self.n_live == 0:
            return np.zeros_like(xs)
        ages = self.t - self.birth_times[: self.n_live]
        return kernel(xs[..., None], ages).sum(axis=-1) / self.k

    # ----------------------------------------------------------------------
    @property
    def ages(self) -> np.ndarray:
        return self.t - self.birth_times[: self.n_live]

    def _grow(self, need: int):
        cap = self.birth_times.size
        while cap < need:
            cap *= 2
        new = np.empty(cap, dtype=float)
        new[: self.n_live] = self.birth_times[: self.n_live]
        self.birth_times = new

    def add_newborns(self, count: int):
        if count <= 0:
            return
        n = self.n_live
        if n + count > self.birth_times.size:
            self._grow(n + count)
        self.birth_times[n : n + count] = self.t
        self.n_live = n + count

    def remove(self, idx: int):
        n = self.n_live
        self.birth_times[idx] = self.birth_times[n - 1]
        self.n_live = n - 1

    def snapshot(self, t_star: float) -> AtomicMeasure:
        ages = np.sort(self.t - self.birth_times[: self.n_live])
        return AtomicMeasure(ages=ages, weight=1.0 / self.k, t_star=t_star)


@dataclass(frozen=True)
class Event:
    time: float
    kind: str  # "birth" | "death"
    age: float
    offspring: int


def next_event(pop: Population, model: RateModel, rng: np.random.Generator,
               horizon: float = math.inf) -> Optional[Event]:
    """Advance ``pop`` to its next accepted event (or the horizon).

    Returns the event, or None if the horizon was reached first (the
    population clock is advanced to the horizon in that case).  The thinning
    scheme matches the batched loop in :func:`simulate`.
    """
    bound = model.birth_sup + model.death_sup
    while True:
        if pop.n_live == 0 or bound <= 0.0:
            pop.t = horizon if math.isfinite(horizon) else pop.t
            return None
        total = pop.n_live * bound
        t_cand = pop.t + rng.exponential(1.0 / total)
        if t_cand >= horizon:
            pop.t = horizon
            return None
        pop.t = t_cand
        idx = int(rng.random() * pop.n_live)
        age = pop.t - pop.birth_times[idx]
        b = float(model.birth_rate(age, pop, pop.k))
        h = float(model.death_rate(age, pop, pop.k))
        if b > model.birth_sup * (1.0 + 1e-9) or h > model.death_sup * (1.0 + 1e-9) or b < 0 or h < 0:
            raise ModelError(
                f"rate evaluation (b={b}, h={h}) violates declared bounds; "
                "thinning is unsound for this model"
            )
        r = rng.random() * bound
        if r < b:
            brood = model.life_law.sample(rng)
            pop.births_life += brood
            pop.add_newborns(brood)
            return Event(pop.t, "birth", age, brood)
        if r < b + h:
            brood = model.split_law.sample(rng)
            pop.deaths += 1
            pop.death_ages.append(age)
            pop.death_times.append(pop.t)
            pop.remove(idx)
            pop.births_split += brood
            pop.add_newborns(brood)
            return Event(pop.t, "death", age, brood)
        # rejected candidate: time has advanced, ages drifted; try again


class MartingaleLedger:
    """Compensated processes (f, M_t) for a panel of test functions.

    ``jump`` collects the discrete part (newborn deposits at age 0 and the
    negative death evaluations); ``comp`` the running compensator integral
    of f(0)*newborn_rate - f*death_rate against the unnormalised population.
    M^f_t = jump - comp is a martingale; the sqrt(K)-scaled version is
    obtained by dividing by sqrt(K).
    """

    def __init__(self, panel: Sequence[TestFunction]):
        self.panel = list(panel)
        self.f0 = np.array([f.at_zero for f in self.panel])
        p = len(self.panel)
        self.jump = np.zeros(p)
        self.comp = np.zeros(p)
        self.times: list[float] = []
        self.m_path: list[np.ndarray] = []
        self.comp_path: list[np.ndarray] = []

    def record(self, t: float):
        self.times.append(t)
        self.m_path.append(self.jump - self.comp)
        self.comp_path.append(self.comp.copy())

    def jump_birth(self, brood: int):
        if brood:
            self.jump += brood * self.f0

    def jump_death(self, age: float, brood: int):
        for i, f in enumerate(self.panel):
            self.jump[i] -= float(f(age))
        if brood:
            self.jump += brood * self.f0

    def accumulate(self, pop: Population, model: RateModel, s0: float, s1: float):
        """Add the compensator integral over [s0, s1] (constant live set)."""
        n = pop.n_live
        if n == 0 or s1 <= s0:
            return
        mid = 0.5 * (s0 + s1)
        half = 0.5 * (s1 - s0)
        s_nodes = mid + half * _GL_NODES
        bt = pop.birth_times[:n]
        ages = s_nodes[:, None] - bt[None, :]
        lm = model.life_law.mean
        sm = model.split_law.mean
        b_fn, h_fn = model.birth, model.death
        if b_fn.is_constant and h_fn.is_constant:
            b = b_fn.value
            h = h_fn.value
            nsum = (b * lm + h * sm) * n * np.ones_like(s_nodes)
            for i, f in enumerate(self.panel):
                fsum = f(ages).sum(axis=1)
                self.comp[i] += half * float(
                    np.dot(_GL_WEIGHTS, self.f0[i] * nsum - h * fsum)
                )
        else:
            t_saved = pop.t
            for q, s in enumerate(s_nodes):
                pop.t = float(s)
                arow = ages[q]
                b = np.asarray(model.birth_rate(arow, pop, pop.k), dtype=float)
                h = np.asarray(model.death_rate(arow, pop, pop.k), dtype=float)
                nvals = b * lm + h * sm
                nsum = float(np.sum(nvals)) if nvals.ndim else float(nvals) * n
                for i, f in enumerate(self.panel):
                    fh = float(np.sum(f(arow) * h))
                    self.comp[i] += half * _GL_WEIGHTS[q] * (self.f0[i] * nsum - fh)
            pop.t = t_saved

    def martingales(self) -> np.ndarray:
        """Path values M^f at the recorded times, shape (n_times, panel)."""
        return np.array(self.m_path)

    def to_csv(self, path: Union[str, Path]):
        with Path(path).open("w") as fh:
            fh.write("t,f_id,M_value,compensator\n")
            for t, m_row, c_row in zip(self.times, self.m_path, self.comp_path):
                for f, m, c in zip(self.panel, m_row, c_row):
                    fh.write(f"{float(t)!r},{f.label},{float(m)!r},{float(c)!r}\n")


class EventLog:
    """Accepted events: time, kind, affected individual's birth time, brood."""

    def __init__(self):
        self.t: list[float] = []
        self.kind: list[int] = []
        self.tau: list[float] = []
        self.brood: list[int] = []

    def add(self, t: float, kind: int, tau: float, brood: int):
        self.t.append(t)
        self.kind.append(kind)
        self.tau.append(tau)
        self.brood.append(brood)

    def __len__(self):
        return len(self.t)

    def to_csv(self, path: Union[str, Path]):
        with Path(path).open("w") as fh:
            fh.write("t,kind,age,offspring\n")
            for t, k, tau, br in zip(self.t, self.kind, self.tau, self.brood):
                name = "birth" if k == KIND_BIRTH else "death"
                fh.write(f"{float(t)!r},{name},{float(t - tau)!r},{br}\n")


@dataclass
class Trajectory:
    """Result of one simulation run: snapshots, counters and bookkeeping."""

    k: int
    t_star: float
    times: np.ndarray
    snapshots: list[AtomicMeasure]
    initial_count: int
    births_life: int
    births_split: int
    deaths: int
    death_ages: np.ndarray
    death_times: np.ndarray
    initial_birth_times: np.ndarray
    ledger: Optional[MartingaleLedger] = None
    events: Optional[EventLog] = None

    @property
    def final_count(self) -> int:
        return self.snapshots[-1].count

    def check_mass_bookkeeping(self) -> bool:
        """|A_T| = |A_0| + births - deaths, as exact integers."""
        return self.final_count == (
            self.initial_count + self.births_life + self.births_split - self.deaths
        )


def simulate(model: RateModel, a0: AtomicMeasure, k: int, horizon: float,
             dt_out: float, rng: np.random.Generator, *,
             panel: Optional[Sequence[TestFunction]] = None,
             with_ledger: bool = False,
             log_events: bool = False,
             population_cap: int = 10 ** 7,
             t_star: Optional[float] = None) -> Trajectory:
    """Simulate the population carrying ``a0`` (unit-weight atoms) to the horizon.

    ``k`` is the normalisation used when rates are evaluated (the rates see
    A_t / k) and the snapshot weight is 1/k.  Snapshots are taken at every
    multiple of ``dt_out``; identical (rng stream, arguments) give identical
    event sequences.
    """
    if a0.weight != 1.0:
        raise ValueError("initial atoms must carry unit weight (raw population)")
    n_out = int(round(horizon / dt_out))
    if abs(n_out * dt_out - horizon) > 1e-9:
        raise ValueError("dt_out must divide the horizon")
    out_times = np.array([i * dt_out for i in range(n_out + 1)])
    out_times[-1] = horizon
    if t_star is None:
        a_star = float(a0.ages.max()) if a0.count else 0.0
        t_star = horizon + a_star

    pop = Population(a0.ages, k=k, t0=0.0)
    initial_bt = pop.birth_times[: pop.n_live].copy()
    ledger = MartingaleLedger(panel) if with_ledger else None
    if with_ledger and panel is None:
        raise ValueError("a ledger needs a test-function panel")
    log = EventLog() if log_events else None

    b_fn, h_fn = model.birth, model.death
    b_const = b_fn.value if b_fn.is_constant and model.k_perturbation is None else None
    h_const = h_fn.value if h_fn.is_constant and model.k_perturbation is None else None
    b_sup = model.birth_sup
    h_sup = model.death_sup
    bound = b_sup + h_sup
    life_law, split_law = model.life_law, model.split_law
    life_det = life_law.k if life_law.kind == "deterministic" else None
    split_det = split_law.k if split_law.kind == "deterministic" else None

    # batched uniforms; order of consumption is fixed, so runs are reproducible
    block = 8192
    ublock = rng.random(block)
    uptr = 0

    def next_u():
        nonlocal ublock, uptr
        if uptr >= block:
            ublock = rng.random(block)
            uptr = 0
        u = ublock[uptr]
        uptr += 1
        return u

    snapshots: list[AtomicMeasure] = []
    out_idx = 0
    seg_start = 0.0
    t = 0.0
    log1p = math.log1p
    n_outs = out_times.size

    def flush_outputs(limit: float) -> float:
        nonlocal out_idx, seg_start
        while out_idx < n_outs and out_times[out_idx] <= limit:
            ot = float(out_times[out_idx])
            pop.t = ot
            if ledger is not None:
                ledger.accumulate(pop, model, seg_start, ot)
                seg_start = ot
                ledger.record(ot)
            snapshots.append(pop.snapshot(t_star))
            out_idx += 1
        return out_times[out_idx] if out_idx < n_outs else math.inf

    next_out = flush_outputs(0.0)

    while True:
        n = pop.n_live
        if n == 0 or bound <= 0.0:
            flush_outputs(horizon)
            pop.t = horizon
            break
        t_cand = t - log1p(-next_u()) / (n * bound)
        if t_cand >= next_out:
            next_out = flush_outputs(min(t_cand, horizon))
        if t_cand >= horizon:
            pop.t = horizon
            break
        t = t_cand
        pop.t = t
        idx = int(next_u() * n)
        tau = pop.birth_times[idx]
        age = t - tau
        if b_const is not None:
            b = b_const
        else:
            b = float(model.birth_rate(age, pop, k))
            if b < 0.0 or b > b_sup * (1.0 + 1e-9):
                raise ModelError(f"birth rate {b} violates declared bound {b_sup}")
        if h_const is not None:
            h = h_const
        else:
            h = float(model.death_rate(age, pop, k))
            if h < 0.0 or h > h_sup * (1.0 + 1e-9):
                raise ModelError(f"death rate {h} violates declared bound {h_sup}")
        r = next_u() * bound
        if r < b:
            if life_det is not None:
                brood = life_det
            elif life_law.kind == "two_point":
                brood = life_law.k1 if next_u() < life_law.p else life_law.k2
            else:
                brood = life_law.sample(rng)
            if ledger is not None:
                ledger.accumulate(pop, model, seg_start, t)
                seg_start = t
                ledger.jump_birth(brood)
            pop.births_life += brood
            pop.add_newborns(brood)
            if log is not None:
                log.add(t, KIND_BIRTH, tau, brood)
        elif r < b + h:
            if split_det is not None:
                brood = split_det
            elif split_law.kind == "two_point":
                brood = split_law.k1 if next_u() < split_law.p else split_law.k2
            else:
                brood = split_law.sample(rng)
            if ledger is not None:
                ledger.accumulate(pop, model, seg_start, t)
                seg_start = t
                ledger.jump_death(age, brood)
            pop.deaths += 1
            pop.death_ages.append(age)
            pop.death_times.append(t)
            pop.remove(idx)
            pop.births_split += brood
            pop.add_newborns(brood)
            if log is not None:
                log.add(t, KIND_DEATH, tau, brood)
        # else: rejected candidate; ages have drifted, nothing else changes
        if pop.n_live > population_cap:
            raise CapacityError(
                f"population {pop.n_live} exceeded cap {population_cap} at t={t:.6g}"
            )

    return Trajectory(
        k=k,
        t_star=t_star,
        times=out_times,
        snapshots=snapshots,
        initial_count=pop.initial_count,
        births_life=pop.births_life,
        births_split=pop.births_split,
        deaths=pop.deaths,
        death_ages=np.array(pop.death_ages),
        death_times=np.array(pop.death_times),
        initial_birth_times=initial_bt,
        ledger=ledger,
        events=log,
    )


# ---------------------------------------------------------------------------
# pathwise identity checking


class TwoVarFunction:
    """Separable f(x, s) = fx(x) * fs(s) with both parts smooth.

    The age part is a :class:`TestFunction`; the time part is one of
    constant / monomial / exponential in s.  Products of this form are
    closed under the pathwise identity's between-event integration: the
    integral of (d/ds) f(s - tau, s) telescopes exactly.
    """

    def __init__(self, xpart: TestFunction, spart: TestFunction, label: str = ""):
        self.xpart = xpart
        self.spart = spart
        self.label = label or f"{xpart.label}*{spart.label}(s)"

    def __call__(self, x, s: float):
        return self.xpart(x) * float(self.spart(np.array(float(s))))


def two_var(xspec: str, sspec: str = "1") -> TwoVarFunction:
    from .measures import _parse_spec

    return TwoVarFunction(_parse_spec(xspec, 1.0), _parse_spec(sspec, 1.0),
                          label=f"{xspec}|{sspec}")


def pathwise_identity_catalogue() -> list[TwoVarFunction]:
    """Closed-form two-variable functions exercised by the identity check."""
    return [
        two_var("1"),
        two_var("x"),
        two_var("exp:1", "exp:-1"),   # e^(x-s)
        two_var("x", "mono:1"),       # x*s
        two_var("x^2", "exp:-0.5"),
    ]


def check_pathwise_identity(traj: Trajectory, f2: TwoVarFunction) -> float:
    """Max relative residual of the pathwise evolution identity.

    Replays the event log and checks, at every output time t,

        (f(.,t), A_t) = (f(.,0), A_0) + int_0^t (d1 f + d2 f, A_s) ds
                        + sum of f(0, birth times) - sum of f(lifespan, death time),

    where the ds-integral is evaluated exactly by telescoping along the
    inter-event segments (the live set is constant there).
    """
    if traj.events is None:
        raise ValueError("trajectory was simulated without an event log")
    bt = list(traj.initial_birth_times)

    def live_sum(s: float) -> float:
        if not bt:
            return 0.0
        arr = np.array(bt)
        return float(np.sum(f2(s - arr, s)))

    lhs0 = live_sum(0.0)
    integral = 0.0
    births = 0.0
    deaths = 0.0
    sum_start = lhs0
    max_resid = 0.0

    ev = traj.events
    n_ev = len(ev)
    ei = 0
    scale = max(1.0, abs(lhs0))
    for t_out in traj.times:
        while ei < n_ev and ev.t[ei] <= t_out:
            te = ev.t[ei]
            sum_end = live_sum(te)
            integral += sum_end - sum_start
            brood = ev.brood[ei]
            if ev.kind[ei] == KIND_DEATH:
                tau = ev.tau[ei]
                deaths += f2(np.array(te - tau), te)
                idx = bt.index(tau)
                bt.pop(idx)
                sum_end -= f2(np.array(te - tau), te)
            if brood:
                bt.extend([te] * brood)
                births += brood * f2(np.array(0.0), te)
                sum_end += brood * f2(np.array(0.0), te)
            sum_start = sum_end
            ei += 1
        sum_end = live_sum(float(t_out))
        integral += sum_end - sum_start
        sum_start = sum_end
        lhs = sum_end
        resid = lhs - lhs0 - integral - births + deaths
        scale = max(scale, abs(lhs), abs(integral), abs(births), abs(deaths))
        max_resid = max(max_resid, abs(float(resid)))
    return max_resid / scale
