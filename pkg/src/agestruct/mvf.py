"""Deterministic large-population limit of the age structure.

The limit density a(x, t) satisfies a transport equation with a nonlocal
death term and a renewal boundary condition: along characteristics ages
advance at unit speed, mass decays at the (population-dependent) death rate,
and the age-zero boundary receives the combined newborn flux.  The solver
uses a characteristics-aligned grid (dx = dt, exact one-cell shift per step)
so the transport term carries no numerical diffusion; the reaction and
boundary terms make the scheme first-order accurate in dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.integrate import quad

from .measures import GridDensity
from .rates import ConstantRate, DensityRate, RateModel

__all__ = [
    "LimitSolution",
    "solve_mvf",
    "classical_exact",
    "classical_pairing",
    "solve_total_ode",
    "logistic_exact",
]

_GL10_NODES, _GL10_WEIGHTS = np.polynomial.legendre.leggauss(10)


@dataclass(frozen=True)
class LimitSolution:
    """Density frames on the characteristics grid, one per time step."""

    dt: float
    times: np.ndarray           # (n_times,)
    values: np.ndarray          # (n_times, n_cells), density at cell centers
    a_star: float

    @property
    def dx(self) -> float:
        return self.dt

    @property
    def t_star(self) -> float:
        return self.dt * self.values.shape[1]

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.values.shape[1]) + 0.5) * self.dt

    @property
    def totals(self) -> np.ndarray:
        return self.dt * self.values.sum(axis=1)

    def frame(self, i: int) -> GridDensity:
        return GridDensity(dx=self.dt, values=self.values[i])

    def frame_at(self, t: float) -> GridDensity:
        return self.frame(self.index_at(t))

    def index_at(self, t: float) -> int:
        i = int(round(t / self.dt))
        if abs(i * self.dt - t) > 1e-9 or not 0 <= i < self.values.shape[0]:
            raise ValueError(f"time {t} is not on the solution grid")
        return i

    def pairings(self, f: Callable) -> np.ndarray:
        """(f, frame) for every stored time."""
        fv = np.asarray(f(self.centers), dtype=float)
        return self.dt * (self.values @ fv)


def solve_mvf(model: RateModel, a0: GridDensity, horizon: float, dt: float) -> LimitSolution:
    """March the limit density to the horizon on a dx = dt grid.

    Each step shifts all cells right by one (exact transport), applies a
    survival factor exp(-death*dt) with the death rate taken from a
    predictor-corrector pass (predict with the current measure, correct with
    the average of current and predicted states), and fills the boundary
    cell with the newborn flux dt * (newborn_rate, a), also corrector-
    averaged.  The initial density must vanish on the last `horizon` worth
    of cells so no mass is ever shifted off the grid.
    """
    if abs(a0.dx - dt) > 1e-12:
        raise ValueError(f"grid spacing {a0.dx} must equal the time step {dt}")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9:
        raise ValueError("horizon must be an integer number of steps")
    centers = a0.centers
    n_cells = a0.n_cells
    n_room = n_cells - n_steps
    if n_room < 1:
        raise ValueError(
            "grid too short: need at least one initial-support cell plus one "
            "cell per time step (t_star >= horizon + dx)"
        )
    if np.any(np.abs(a0.values[n_room:]) > 1e-12):
        raise ValueError("initial density has mass within `horizon` of the grid end")
    a_star = n_room * dt

    lm = model.life_law.mean
    sm = model.split_law.mean
    x_mid = centers - 0.5 * dt          # characteristic midpoints for cells >= 1

    values = np.empty((n_steps + 1, n_cells))
    values[0] = a0.values
    v = a0.values.copy()
    shifted = np.empty_like(v)
    for k in range(n_steps):
        mu = GridDensity(dx=dt, values=v)
        shifted[1:] = v[:-1]
        shifted[0] = 0.0

        h_now = np.asarray(model.death_rate(x_mid[1:], mu), dtype=float)
        b_now = np.asarray(model.birth_rate(centers, mu), dtype=float)
        hc_now = np.asarray(model.death_rate(centers, mu), dtype=float)
        newborn_now = b_now * lm + hc_now * sm
        flux_now = float(np.sum(newborn_now * v))          # (1/dx)*(newborn, a_t)

        pred = shifted.copy()
        pred[1:] *= np.exp(-dt * h_now)
        pred[0] = dt * flux_now
        mu_pred = GridDensity(dx=dt, values=np.maximum(pred, 0.0))

        h_pred = np.asarray(model.death_rate(x_mid[1:], mu_pred), dtype=float)
        b_pred = np.asarray(model.birth_rate(centers, mu_pred), dtype=float)
        hc_pred = np.asarray(model.death_rate(centers, mu_pred), dtype=float)
        newborn_pred = b_pred * lm + hc_pred * sm
        flux_pred = float(np.sum(newborn_pred * pred))

        new = shifted
        new[1:] *= np.exp(-dt * 0.5 * (h_now + h_pred))
        new[0] = dt * 0.5 * (flux_now + flux_pred)
        if new.min() < -1e-12:
            raise AssertionError("transport scheme produced a negative density")
        values[k + 1] = new
        v, shifted = new.copy(), shifted

    times = dt * np.arange(n_steps + 1)
    return LimitSolution(dt=dt, times=times, values=values, a_star=a_star)


# ---------------------------------------------------------------------------
# constant-parameter closed forms


def classical_exact(a0: GridDensity, birth: float, death: float,
                    split_mean: float, life_mean: float, t: float) -> GridDensity:
    """Exact constant-parameter density at time t, sampled on the grid of a0.

    For ages beyond t the initial profile is transported and thinned by
    exp(-death*t); younger ages carry the renewal solution
    newborn_rate * X_0 * exp((newborn_rate - death)(t - x)) * exp(-death*x).
    ``t`` must be a multiple of the grid spacing.
    """
    dx = a0.dx
    m = int(round(t / dx))
    if abs(m * dx - t) > 1e-9:
        raise ValueError("t must sit on the grid (multiple of dx)")
    n = birth * life_mean + death * split_mean
    x0 = a0.mass
    centers = a0.centers
    out = np.zeros_like(a0.values)
    if m > 0:
        xs = centers[:m]
        out[:m] = n * x0 * np.exp((n - death) * (t - xs)) * np.exp(-death * xs)
    if m < a0.n_cells:
        out[m:] = a0.values[: a0.n_cells - m] * math.exp(-death * t)
    return GridDensity(dx=dx, values=out)


def classical_pairing(f: Callable, a0: GridDensity, birth: float, death: float,
                      split_mean: float, life_mean: float, t: float) -> float:
    """Exact (f, limit measure at t) for constant parameters.

    Integrates f against the transported initial profile cell by cell
    (10-point Gauss-Legendre per cell) and against the renewal branch by
    adaptive quadrature; accurate to quadrature precision, independent of
    any marching scheme.
    """
    dx = a0.dx
    n = birth * life_mean + death * split_mean
    x0 = a0.mass
    # survivors: sum_j a0_j * exp(-death*t) * int_{cell_j} f(x + t) dx
    lefts = np.arange(a0.n_cells) * dx + t
    nodes = lefts[:, None] + 0.5 * dx * (_GL10_NODES[None, :] + 1.0)
    cell_ints = 0.5 * dx * (np.asarray(f(nodes)) @ _GL10_WEIGHTS)
    survivors = math.exp(-death * t) * float(np.dot(a0.values, cell_ints))
    if t <= 0.0:
        return survivors
    renewal, _ = quad(
        lambda x: float(f(np.array(x))) * n * x0
        * math.exp((n - death) * (t - x)) * math.exp(-death * x),
        0.0, t, limit=200, epsabs=1e-12, epsrel=1e-11,
    )
    return survivors + renewal


# ---------------------------------------------------------------------------
# total-mass dynamics for density-dependent rates


def _rate_of_mass(rate_fn, x_mass: float) -> float:
    if isinstance(rate_fn, ConstantRate):
        return rate_fn.value
    if isinstance(rate_fn, DensityRate):
        return rate_fn.fn(x_mass)
    raise ValueError("total-mass dynamics need density-dependent (or constant) rates")


def solve_total_ode(model: RateModel, x0: float, horizon: float, dt: float):
    """Classical RK4 for the total mass X' = (newborn(X) - death(X)) * X.

    Valid when the rates depend on the population only through its total
    mass.  Returns (times, X values); fourth-order accurate in dt.
    """
    lm = model.life_law.mean
    sm = model.split_law.mean

    def growth(x):
        b = _rate_of_mass(model.birth, x)
        h = _rate_of_mass(model.death, x)
        return (b * lm + h * sm - h) * x

    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9:
        raise ValueError("horizon must be an integer number of steps")
    xs = np.empty(n_steps + 1)
    xs[0] = x0
    x = float(x0)
    for k in range(n_steps):
        k1 = growth(x)
        k2 = growth(x + 0.5 * dt * k1)
        k3 = growth(x + 0.5 * dt * k2)
        k4 = growth(x + dt * k3)
        x += dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        xs[k + 1] = x
    return dt * np.arange(n_steps + 1), xs


def logistic_exact(x0: float, t: Union[float, np.ndarray]):
    """Closed-form solution of X' = X(1 - X), the order-check oracle."""
    t = np.asarray(t, dtype=float)
    return x0 / (x0 + (1.0 - x0) * np.exp(-t))
