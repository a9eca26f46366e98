import math

import numpy as np
import pytest
from scipy.stats import kstest

from agestruct.branching import (CapacityError, Population, check_pathwise_identity,
                                 pathwise_identity_catalogue, next_event, simulate, two_var)
from agestruct.harness import replicate_stream
from agestruct.measures import AtomicMeasure, constant, monomial, pair
from agestruct.rates import (ConstantRate, DensityRate, OffspringLaw, RateModel,
                             ScalarFn, classical_model, pure_splitting)


def atoms(ages, t_star=2.0):
    return AtomicMeasure(ages=np.asarray(ages, dtype=float), weight=1.0, t_star=t_star)


def stream(i, ctx=0):
    return replicate_stream(987654, 9, ctx, i)


PURE_DEATH = classical_model(0.0, 1.0, OffspringLaw.deterministic(0),
                             OffspringLaw.deterministic(0))
TRANSPORT = classical_model(0.0, 0.0, OffspringLaw.deterministic(0),
                            OffspringLaw.deterministic(0))


def test_empty_population_has_no_events():
    pop = Population([], k=1)
    assert next_event(pop, PURE_DEATH, stream(0), horizon=5.0) is None
    traj = simulate(PURE_DEATH, atoms([]), k=1, horizon=1.0, dt_out=0.5,
                    rng=stream(1), t_star=2.0)
    assert all(s.count == 0 for s in traj.snapshots)


def test_single_lifetime_is_exponential():
    times = np.empty(20000)
    for i in range(times.size):
        pop = Population([0.0], k=1)
        times[i] = next_event(pop, PURE_DEATH, stream(i, ctx=1)).time
    se = times.std() / math.sqrt(times.size)
    assert abs(times.mean() - 1.0) <= 3 * se


def test_two_individuals_first_event_superposition():
    times = np.empty(20000)
    for i in range(times.size):
        pop = Population([0.0, 0.3], k=1)
        times[i] = next_event(pop, PURE_DEATH, stream(i, ctx=2)).time
    se = times.std() / math.sqrt(times.size)
    assert abs(times.mean() - 0.5) <= 3 * se


def test_thinning_exact_with_rejections():
    # immortal single individual giving (empty) births at rate 0.4 under a
    # loose bound: accepted inter-event gaps must still be Exp(0.4)
    model = RateModel("classical", ConstantRate(0.4), ConstantRate(0.0),
                      OffspringLaw.deterministic(0), OffspringLaw.deterministic(0),
                      birth_sup=1.0, death_sup=0.5)
    rng = stream(0, ctx=3)
    pop = Population([0.0], k=1)
    times = [0.0]
    for _ in range(10000):
        ev = next_event(pop, model, rng)
        times.append(ev.time)
    gaps = np.diff(np.array(times))
    stat = kstest(gaps, "expon", args=(0, 1.0 / 0.4))
    assert stat.pvalue > 0.01


def test_transport_only():
    a0 = atoms([0.2, 0.5, 0.9])
    traj = simulate(TRANSPORT, a0, k=1, horizon=1.0, dt_out=0.25, rng=stream(4),
                    t_star=2.0)
    assert traj.births_life == traj.births_split == traj.deaths == 0
    # pairing with x grows by exactly t * mass
    for t, snap in zip(traj.times, traj.snapshots):
        assert pair(monomial(1), snap) == pytest.approx(1.6 + 3 * t, rel=1e-14)
        assert np.allclose(np.sort(snap.ages), np.sort(a0.ages) + t)


def test_pure_splitting_mean_mass():
    model = pure_splitting(1.0, 2)
    vals = np.empty(150)
    for i in range(vals.size):
        traj = simulate(model, atoms(np.zeros(300), t_star=1.0), k=300, horizon=1.0,
                        dt_out=1.0, rng=stream(i, ctx=4), t_star=1.0)
        vals[i] = pair(constant(1.0), traj.snapshots[-1])
    se = vals.std() / math.sqrt(vals.size)
    assert abs(vals.mean() - math.e) <= 3 * se


def test_pure_death_small_population_mean():
    vals = np.empty(5000)
    for i in range(vals.size):
        traj = simulate(PURE_DEATH, atoms([0.0, 0.0, 0.0], t_star=1.0), k=1,
                        horizon=1.0, dt_out=1.0, rng=stream(i, ctx=5), t_star=1.0)
        vals[i] = traj.final_count
    se = vals.std() / math.sqrt(vals.size)
    assert abs(vals.mean() - 3 * math.exp(-1.0)) <= 3 * se


def test_ledger_zero_without_events():
    panel = [constant(1.0), monomial(1)]
    traj = simulate(TRANSPORT, atoms([0.3, 0.6]), k=1, horizon=1.0, dt_out=0.5,
                    rng=stream(6), panel=panel, with_ledger=True, t_star=2.0)
    assert np.allclose(traj.ledger.martingales(), 0.0)


def test_ledger_compensator_exact_for_constant_rates():
    # for constant rates the mass compensator is (newborn - death) * int N dt,
    # reconstructible exactly from the event log
    model = pure_splitting(1.0, 2)
    traj = simulate(model, atoms(np.zeros(200), t_star=1.0), k=200, horizon=1.0,
                    dt_out=1.0, rng=stream(7, ctx=6), panel=[constant(1.0)],
                    with_ledger=True, log_events=True, t_star=1.0)
    times = np.array(traj.events.t)
    # piecewise-constant population size: +1 per splitting event (2 born, 1 dead)
    n_path = 200 + np.arange(times.size)
    segs = np.diff(np.concatenate([[0.0], times, [1.0]]))
    n_vals = np.concatenate([[200], n_path + 1])
    integral = float(np.sum(segs * n_vals))
    # newborn - death = 2 - 1 = 1, f = 1
    assert traj.ledger.comp_path[-1][0] == pytest.approx(integral, rel=1e-12)
    # and the martingale value is jumps (= #events) minus that integral
    m_final = traj.ledger.martingales()[-1][0]
    assert m_final == pytest.approx(times.size - integral, rel=1e-10)


def test_ledger_variance_and_mean():
    model = pure_splitting(1.0, 2)
    k = 300
    m_vals = np.empty(200)
    for i in range(m_vals.size):
        traj = simulate(model, atoms(np.zeros(k), t_star=1.0), k=k, horizon=1.0,
                        dt_out=1.0, rng=stream(i, ctx=7), panel=[constant(1.0)],
                        with_ledger=True, t_star=1.0)
        m_vals[i] = traj.ledger.martingales()[-1][0] / math.sqrt(k)
    se_mean = m_vals.std() / math.sqrt(m_vals.size)
    assert abs(m_vals.mean()) <= 3 * se_mean
    var = m_vals.var(ddof=1)
    target = math.e - 1.0
    d = m_vals - m_vals.mean()
    se_var = math.sqrt(max(np.mean(d ** 4) - var ** 2, 0.0) / m_vals.size)
    assert abs(var - target) <= 3 * se_var


@pytest.fixture(scope="module")
def logged_trajectories():
    mixed = RateModel("classical", ConstantRate(0.5), ConstantRate(0.8),
                      OffspringLaw.two_point(0.5, 0, 2), OffspringLaw.poisson(1.2),
                      birth_sup=0.5, death_sup=0.8)
    dens = RateModel("density_dependent", ConstantRate(0.4),
                     DensityRate(ScalarFn.affine(0.5, 0.3)),
                     OffspringLaw.deterministic(1), OffspringLaw.deterministic(2),
                     birth_sup=0.4, death_sup=2.0)
    out = []
    for ctx, (model, n0) in enumerate([(pure_splitting(1.0, 2), 120),
                                       (mixed, 100), (dens, 60)]):
        a0 = atoms(np.linspace(0.0, 1.0, n0))
        out.append(simulate(model, a0, k=n0, horizon=1.0, dt_out=0.25,
                            rng=stream(ctx, ctx=8), log_events=True, t_star=2.0))
    return out


def test_pathwise_identity_counting(logged_trajectories):
    for traj in logged_trajectories:
        assert check_pathwise_identity(traj, two_var("1")) == 0.0


@pytest.mark.parametrize("spec", [("x", "1"), ("exp:1", "exp:-1"),
                                  ("x", "mono:1"), ("x^2", "exp:-0.5")])
def test_pathwise_identity_residuals(logged_trajectories, spec):
    f2 = two_var(*spec)
    for traj in logged_trajectories:
        assert check_pathwise_identity(traj, f2) <= 1e-9


def test_pathwise_identity_catalogue_complete(logged_trajectories):
    for traj in logged_trajectories:
        worst = max(check_pathwise_identity(traj, f2) for f2 in pathwise_identity_catalogue())
        assert worst <= 1e-9


def test_mass_bookkeeping_and_support(logged_trajectories):
    for traj in logged_trajectories:
        assert traj.check_mass_bookkeeping()
        for t, snap in zip(traj.times, traj.snapshots):
            if snap.count:
                assert snap.ages.max() <= t + 1.0 + 1e-12


def test_event_log_determinism(tmp_path):
    model = pure_splitting(1.0, 2)

    def run(seed_idx):
        traj = simulate(model, atoms(np.zeros(100), t_star=1.0), k=100, horizon=1.0,
                        dt_out=1.0, rng=stream(seed_idx, ctx=9), log_events=True,
                        t_star=1.0)
        path = tmp_path / f"ev{seed_idx}.csv"
        traj.events.to_csv(path)
        return path.read_bytes()

    a = run(0)
    b = run(0)
    c = run(1)
    assert a == b
    assert a != c


def test_population_cap():
    model = pure_splitting(1.0, 3)  # strongly supercritical
    with pytest.raises(CapacityError):
        simulate(model, atoms(np.zeros(200), t_star=3.0), k=200, horizon=3.0,
                 dt_out=1.0, rng=stream(11, ctx=10), population_cap=1000,
                 t_star=3.0)


def test_snapshot_weight_and_times():
    model = pure_splitting(1.0, 2)
    traj = simulate(model, atoms(np.zeros(50), t_star=1.0), k=50, horizon=1.0,
                    dt_out=0.25, rng=stream(12, ctx=11), t_star=1.0)
    assert np.allclose(traj.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert traj.snapshots[0].weight == pytest.approx(1.0 / 50)
    assert traj.snapshots[0].count == 50


def test_ledger_csv_format(tmp_path):
    model = pure_splitting(1.0, 2)
    traj = simulate(model, atoms(np.zeros(40), t_star=1.0), k=40, horizon=1.0,
                    dt_out=0.5, rng=stream(20, ctx=12), panel=[constant(1.0)],
                    with_ledger=True, t_star=1.0)
    path = tmp_path / "ledger.csv"
    traj.ledger.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,f_id,M_value,compensator"
    assert len(lines) == 1 + 3  # three output times, one panel function
