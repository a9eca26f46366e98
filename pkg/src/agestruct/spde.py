"""Gaussian fluctuation field around the deterministic limit.

The centred, sqrt(K)-scaled deviation of the empirical age structure from
its limit converges to a linear stochastic PDE driven by a Gaussian
martingale measure.  This module simulates that limit on the same
characteristics grid as the limit solver:

* transport is an exact one-cell shift, decay is a survival factor;
* the measure-derivative (Frechet) drift terms deposit into cells against
  the frozen background, and the renewal terms deposit into the boundary
  cell (the delta_0 parts of the SPDE are represented as boundary-cell
  influx divided by dx);
* the noise is factored into independent per-cell death increments plus a
  birth increment correlated through the splitting brood mean plus an
  independent residual.  For every test function f this construction
  reproduces the per-step variance

      dt * (f(0)^2 * newborn_m2 + death * f^2
            - 2 f(0) * death * split_mean * f,  background)

  exactly (with f(0) read at the first cell center, consistent with the
  midpoint pairing rule), so the simulated martingale has the limit's
  quadratic variation by construction.

The step is explicit Euler-Maruyama: all drift deposits are evaluated at
the pre-step state against the pre-step background frame.  The
deterministic part of a noisy step is bit-identical to a mean-evolution
step, so the pathwise mean equals the evolved mean exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .measures import GridDensity, TestFunction
from .mvf import LimitSolution
from .rates import RateModel

__all__ = [
    "FluctuationField",
    "NoiseChannel",
    "noise_channel",
    "remark_covariance_grid",
    "step_z",
    "evolve_mean",
    "MeanPath",
    "simulate_fluctuation_paths",
    "classical_mean_exact",
    "classical_exp_mean",
    "ito_isometry_variance",
    "exp_pairing_grid",
    "qv_integral_frames",
    "covariation_integral_frames",
    "classical_qv_mass",
    "density_dependent_exp_mean",
]


# ---------------------------------------------------------------------------
# noise construction


@dataclass(frozen=True)
class NoiseChannel:
    """Per-step noise scales derived from one background frame.

    ``sigma_cells[j]`` is the standard deviation of the death increment in
    cell j; the boundary birth increment is ``split_mean * sum(deaths) +
    residual`` with residual standard deviation ``sigma_boundary``.
    """

    dx: float
    dt: float
    sigma_cells: np.ndarray
    split_mean: float
    sigma_boundary: float

    def functional_covariance(self, f_vals: np.ndarray, g_vals: np.ndarray) -> float:
        """Cov of the per-step noise paired with f and with g (exact)."""
        f0 = f_vals[0]
        g0 = g_vals[0]
        s2 = self.sigma_cells ** 2
        cross = float(np.sum((f0 * self.split_mean - f_vals)
                             * (g0 * self.split_mean - g_vals) * s2))
        return cross + f0 * g0 * self.sigma_boundary ** 2


def noise_channel(model: RateModel, frame: GridDensity, dt: float) -> NoiseChannel:
    """Build the two-channel noise scales for one background frame."""
    x = frame.centers
    h = np.asarray(model.death_rate(x, frame), dtype=float) * np.ones_like(x)
    b = np.asarray(model.birth_rate(x, frame), dtype=float) * np.ones_like(x)
    a = frame.values
    dx = frame.dx
    sm = model.split_law.mean
    s2 = model.split_law.second_moment
    l2 = model.life_law.second_moment
    sigma_cells = np.sqrt(np.maximum(h * a, 0.0) * dx * dt)
    resid_rate = b * l2 + h * (s2 - sm * sm)
    sigma_boundary = math.sqrt(max(float(np.sum(resid_rate * a) * dx), 0.0) * dt)
    return NoiseChannel(dx=dx, dt=dt, sigma_cells=sigma_cells,
                        split_mean=sm, sigma_boundary=sigma_boundary)


def remark_covariance_grid(model: RateModel, frame: GridDensity,
                           f_vals: np.ndarray, g_vals: np.ndarray, dt: float) -> float:
    """Per-step covariance target from the quadratic-covariation formula.

    Evaluated in the grid convention: f(0) and g(0) are read at the first
    cell center and the pairing uses the midpoint rule, matching the
    delta_0-as-boundary-cell representation.
    """
    x = frame.centers
    h = np.asarray(model.death_rate(x, frame), dtype=float) * np.ones_like(x)
    b = np.asarray(model.birth_rate(x, frame), dtype=float) * np.ones_like(x)
    sm, s2 = model.split_law.mean, model.split_law.second_moment
    lm, l2 = model.life_law.mean, model.life_law.second_moment
    w = b * l2 + h * s2
    f0, g0 = f_vals[0], g_vals[0]
    integrand = (f0 * g0 * w + h * f_vals * g_vals
                 - h * sm * (f0 * g_vals + g0 * f_vals))
    return dt * float(np.sum(integrand * frame.values) * frame.dx)


# ---------------------------------------------------------------------------
# drift coefficients (precomputed per background)


class _Coeffs:
    """Per-step arrays driving the drift and noise of the grid engine."""

    def __init__(self, model: RateModel, background: LimitSolution,
                 with_noise: bool):
        self.model = model
        self.bg = background
        dt = background.dt
        dx = background.dx
        n_times, n_cells = background.values.shape
        x = background.centers
        x_mid = x - 0.5 * dx
        lm = model.life_law.mean
        sm = model.split_law.mean
        l2 = model.life_law.second_moment
        s2 = model.split_law.second_moment

        self.decay = np.empty((n_times - 1, n_cells))
        self.n_rows = np.empty((n_times, n_cells))
        self.h_rows = np.empty((n_times, n_cells))
        b_rows = np.empty((n_times, n_cells))
        uh = np.zeros((n_times, n_cells))
        un = np.zeros((n_times, n_cells))
        self._kernel_parts: list = [None] * n_times
        any_u = False
        any_kernel = False
        ones = np.ones(n_cells)
        for k in range(n_times):
            frame = GridDensity(dx=dx, values=background.values[k])
            b_row = np.asarray(model.birth_rate(x, frame), dtype=float) * ones
            h_row = np.asarray(model.death_rate(x, frame), dtype=float) * ones
            b_rows[k] = b_row
            self.h_rows[k] = h_row
            self.n_rows[k] = b_row * lm + h_row * sm
            if k < n_times - 1:
                hm = np.asarray(model.death_rate(x_mid, frame), dtype=float) * ones
                self.decay[k] = np.exp(-dt * hm)
            ub, w3b, kerb = model.birth.frechet_terms(x, frame)
            udh, w3h, kerh = model.death.frechet_terms(x, frame)
            uh[k] = udh
            un[k] = ub * lm + udh * sm
            if np.any(udh) or np.any(ub):
                any_u = True
            if w3h is not None or w3b is not None:
                any_kernel = True
                self._kernel_parts[k] = (w3h, kerh, w3b, kerb, lm, sm)
        self.uh = uh if (any_u or any_kernel) else None
        self.un = un if (any_u or any_kernel) else None
        self.has_kernel = any_kernel
        self._kernel_cache: dict = {}
        self.x = x
        # scalar pairings dx * sum(u * a) used by the boundary deposits
        a = background.values
        self.una = dx * np.sum(un * a, axis=1)

        if with_noise:
            self.sigma_cells = np.sqrt(
                np.maximum(self.h_rows[:-1] * a[:-1], 0.0) * dx * dt)
            resid = b_rows[:-1] * l2 + self.h_rows[:-1] * (s2 - sm * sm)
            self.sigma_boundary = np.sqrt(
                np.maximum(np.sum(resid * a[:-1], axis=1) * dx, 0.0) * dt)
        else:
            self.sigma_cells = None
            self.sigma_boundary = None
        self.split_mean = sm

    def kernel_terms(self, k: int):
        """Lazy (death, newborn) Frechet kernel matrices for step k."""
        if self._kernel_parts[k] is None:
            return None
        if k not in self._kernel_cache:
            w3h, kerh, w3b, kerb, lm, sm = self._kernel_parts[k]
            x = self.x
            zero = np.zeros((x.size, x.size))
            gh = kerh(x[:, None], x[None, :]) * w3h[:, None] if w3h is not None else zero
            gb = kerb(x[:, None], x[None, :]) * w3b[:, None] if w3b is not None else zero
            if len(self._kernel_cache) > 4:
                self._kernel_cache.clear()
            self._kernel_cache[k] = (gh, gb * lm + gh * sm)
        return self._kernel_cache[k]


def _engine_step(z: np.ndarray, k: int, co: _Coeffs, w0: int, w1: int,
                 rng: Optional[np.random.Generator]) -> None:
    """Advance paths ``z`` (B, J) in place from step k to k+1.

    ``w0``/``w1`` are the active support widths before/after the step.
    Explicit Euler: every deposit uses the pre-step state and the pre-step
    background frame.  With ``rng`` None the step is purely deterministic
    (mean evolution); the deterministic part is identical either way.
    """
    dx = co.bg.dx
    dt = co.bg.dt
    zs = z[:, :w0]
    nz0 = dx * (zs @ co.n_rows[k, :w0])
    a0 = co.bg.values[k, :w0]
    if co.uh is not None:
        mass0 = dx * zs.sum(axis=1)
        dep0 = -dt * np.outer(mass0, co.uh[k, :w0] * a0)
        bnd0 = dt * (co.una[k] * mass0 + nz0) / dx
        kt = co.kernel_terms(k) if co.has_kernel else None
        if kt is not None:
            gh, gn = kt
            kh0 = dx * (zs @ gh[:w0, :w0].T)   # (B, w0): kernel part of d_A death (Z)
            kn0 = dx * (zs @ gn[:w0, :w0].T)
            dep0 -= dt * kh0 * a0[None, :]
            bnd0 = bnd0 + dt * np.sum(kn0 * a0[None, :], axis=1)
    else:
        dep0 = None
        bnd0 = dt * nz0 / dx

    # exact transport + survival, then deposits
    z[:, 1:w1] = z[:, : w1 - 1] * co.decay[k, 1:w1]
    z[:, 0] = 0.0
    if dep0 is not None:
        z[:, :w0] += dep0
    z[:, 0] += bnd0

    if rng is not None:
        sig = co.sigma_cells[k, :w0]
        noise = rng.standard_normal((z.shape[0], w0))
        noise *= sig
        delta_b = co.split_mean * noise.sum(axis=1)
        delta_b += co.sigma_boundary[k] * rng.standard_normal(z.shape[0])
        z[:, :w0] -= noise / dx
        z[:, 0] += delta_b / dx


def _width(co: _Coeffs, k: int) -> int:
    n_cells = co.bg.values.shape[1]
    n_room = int(round(co.bg.a_star / co.bg.dx))
    return min(n_room + k, n_cells)


# ---------------------------------------------------------------------------
# public single-path interface


@dataclass
class FluctuationField:
    """One grid path of the fluctuation field, pinned to a background."""

    background: LimitSolution
    step_index: int
    values: np.ndarray
    _coeffs: Optional[_Coeffs] = None

    @property
    def time(self) -> float:
        return self.step_index * self.background.dt

    @property
    def density(self) -> GridDensity:
        return GridDensity(dx=self.background.dx, values=self.values, signed=True)

    @classmethod
    def start(cls, background: LimitSolution, z0: np.ndarray, model: RateModel,
              with_noise: bool = True) -> "FluctuationField":
        z0 = np.asarray(z0, dtype=float)
        if z0.size != background.values.shape[1]:
            raise ValueError("initial fluctuation grid does not match the background")
        co = _Coeffs(model, background, with_noise=with_noise)
        return cls(background=background, step_index=0, values=z0.copy(), _coeffs=co)


def step_z(field: FluctuationField, model: RateModel,
           noise_rng: Optional[np.random.Generator]) -> FluctuationField:
    """One Euler-Maruyama step of the fluctuation SPDE (in place).

    Passing ``noise_rng=None`` performs the deterministic drift step only,
    which is exactly the mean evolution.
    """
    co = field._coeffs
    if co is None or co.bg is not field.background:
        co = _Coeffs(model, field.background, with_noise=noise_rng is not None)
        field._coeffs = co
    if noise_rng is not None and co.sigma_cells is None:
        raise ValueError("field was prepared without noise scales")
    k = field.step_index
    z = field.values.reshape(1, -1)
    _engine_step(z, k, co, _width(co, k), _width(co, k + 1), noise_rng)
    field.step_index = k + 1
    return field


@dataclass(frozen=True)
class MeanPath:
    """Deterministic fluctuation-mean frames on the background grid."""

    dt: float
    times: np.ndarray
    values: np.ndarray

    @property
    def dx(self) -> float:
        return self.dt

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.values.shape[1]) + 0.5) * self.dt

    def frame(self, i: int) -> GridDensity:
        return GridDensity(dx=self.dt, values=self.values[i], signed=True)

    def pairings(self, f: Callable) -> np.ndarray:
        fv = np.asarray(f(self.centers), dtype=float)
        return self.dt * (self.values @ fv)


def evolve_mean(model: RateModel, nu0: np.ndarray, background: LimitSolution,
                horizon: Optional[float] = None) -> MeanPath:
    """Deterministic evolution of the expected fluctuation measure.

    Same transport/decay/deposit scheme as the noisy step with the noise
    switched off and the measure-derivative terms evaluated at the running
    mean itself.
    """
    co = _Coeffs(model, background, with_noise=False)
    n_steps = background.values.shape[0] - 1
    if horizon is not None:
        n_steps = background.index_at(horizon)
    nu0 = np.asarray(nu0, dtype=float)
    out = np.empty((n_steps + 1, nu0.size))
    out[0] = nu0
    z = nu0.reshape(1, -1).copy()
    for k in range(n_steps):
        _engine_step(z, k, co, _width(co, k), _width(co, k + 1), None)
        out[k + 1] = z[0]
    return MeanPath(dt=background.dt, times=background.dt * np.arange(n_steps + 1),
                    values=out)


# ---------------------------------------------------------------------------
# batched path study


def simulate_fluctuation_paths(
    model: RateModel,
    background: LimitSolution,
    z0: np.ndarray,
    n_paths: int,
    panel: Sequence[TestFunction],
    record_times: Sequence[float],
    stream_factory: Callable[[int], np.random.Generator],
    block_size: int = 2000,
) -> np.ndarray:
    """Simulate grid paths of the fluctuation SPDE; return panel pairings.

    Output shape is (n_paths, len(record_times), len(panel)).  Paths are
    organised in blocks; block ``i`` draws from ``stream_factory(i)``, so
    results do not depend on scheduling.
    """
    co = _Coeffs(model, background, with_noise=True)
    dx = background.dx
    rec_idx = np.array([background.index_at(t) for t in record_times])
    fvals = np.stack([np.asarray(f(background.centers), dtype=float) for f in panel])
    z0 = np.asarray(z0, dtype=float)
    n_steps = background.values.shape[0] - 1
    if rec_idx.max() > n_steps:
        raise ValueError("record time beyond the background horizon")

    out = np.empty((n_paths, rec_idx.size, len(panel)))
    start = 0
    block_i = 0
    while start < n_paths:
        nb = min(block_size, n_paths - start)
        rng = stream_factory(block_i)
        z = np.tile(z0, (nb, 1))
        for r, ki in enumerate(rec_idx):
            if ki == 0:
                out[start : start + nb, r] = dx * (z @ fvals.T)
        for k in range(n_steps):
            _engine_step(z, k, co, _width(co, k), _width(co, k + 1), rng)
            hits = np.nonzero(rec_idx == k + 1)[0]
            for r in hits:
                out[start : start + nb, r] = dx * (z @ fvals.T)
        start += nb
        block_i += 1
    return out


# ---------------------------------------------------------------------------
# constant-parameter closed forms for the mean and the variance


def classical_mean_exact(z0_density: GridDensity, birth: float, death: float,
                         split_mean: float, life_mean: float,
                         z0_mass: float, t: float) -> GridDensity:
    """Exact constant-parameter mean-fluctuation density at time t.

    Ages beyond t transport the initial mean density with survival
    exp(-death*t); younger ages carry
    newborn_rate * z0_mass * exp((newborn_rate - death) t) * exp(-newborn_rate * x).
    """
    dx = z0_density.dx
    m = int(round(t / dx))
    if abs(m * dx - t) > 1e-9:
        raise ValueError("t must sit on the grid (multiple of dx)")
    n = birth * life_mean + death * split_mean
    centers = z0_density.centers
    out = np.zeros_like(z0_density.values)
    if m > 0:
        xs = centers[:m]
        out[:m] = n * z0_mass * math.exp((n - death) * t) * np.exp(-n * xs)
    if m < z0_density.n_cells:
        out[m:] = z0_density.values[: z0_density.n_cells - m] * math.exp(-death * t)
    return GridDensity(dx=dx, values=out, signed=True)


def classical_exp_mean(lam: float, z0_exp_pairing: float, z0_mass: float,
                       birth: float, death: float, split_mean: float,
                       life_mean: float, t: float) -> float:
    """Exact E[(e^(lam x), Z_t)] for constant parameters.

    ``z0_exp_pairing`` is (e^(lam x), Z_0) and ``z0_mass`` is (1, Z_0).
    """
    n = birth * life_mean + death * split_mean
    if abs(n - lam) < 1e-12:
        growth = n * t * math.exp(n * t)
    else:
        growth = n / (n - lam) * (math.exp(n * t) - math.exp(lam * t))
    return math.exp(-death * t) * (math.exp(lam * t) * z0_exp_pairing
                                   + growth * z0_mass)


def exp_pairing_grid(lam: float, grid: GridDensity) -> float:
    """Exact (e^(lam x), grid) treating the grid as piecewise constant."""
    edges = np.arange(grid.n_cells + 1) * grid.dx
    if lam == 0.0:
        return grid.mass
    cell = (np.exp(lam * edges[1:]) - np.exp(lam * edges[:-1])) / lam
    return float(np.dot(grid.values, cell))


def _classical_exp_limit_pairing(lam: float, a0: GridDensity, birth: float,
                                 death: float, split_mean: float,
                                 life_mean: float, s: float) -> float:
    """(e^(lam x), limit measure at s) for constant parameters, closed form."""
    n = birth * life_mean + death * split_mean
    x0 = a0.mass
    init = math.exp((lam - death) * s) * exp_pairing_grid(lam, a0)
    if s <= 0:
        return init
    if abs(lam - n) < 1e-12:
        renew = n * x0 * math.exp((n - death) * s) * s
    else:
        renew = n * x0 * math.exp((n - death) * s) \
            * (math.exp((lam - n) * s) - 1.0) / (lam - n)
    return init + renew


def ito_isometry_variance(lam: float, a0: GridDensity, birth: float, death: float,
                          life_law, split_law, t: float) -> float:
    """Var[(e^(lam x), Z_t)] for constant parameters and deterministic Z_0.

    Built by quadrature from the solved stochastic representation: the
    solution is a double stochastic integral against the mass martingale
    plus a single integral against the e^(lam x) martingale; collapsing the
    double integral by stochastic Fubini leaves deterministic kernels whose
    isometry integral uses the closed-form quadratic covariations.
    """
    lm, l2 = life_law.mean, life_law.second_moment
    sm, s2 = split_law.mean, split_law.second_moment
    n = birth * lm + death * sm
    w = birth * l2 + death * s2
    h = death
    x0 = a0.mass

    def x_mass(s):
        return x0 * math.exp((n - h) * s)

    def pair(mu, s):
        return _classical_exp_limit_pairing(mu, a0, birth, death, sm, lm, s)

    def gamma_00(s):
        return (w + h - 2.0 * h * sm) * x_mass(s)

    def gamma_0l(s):
        return (w - h * sm) * x_mass(s) + h * (1.0 - sm) * pair(lam, s)

    def gamma_ll(s):
        return w * x_mass(s) + h * pair(2.0 * lam, s) - 2.0 * h * sm * pair(lam, s)

    def alpha(s):
        if abs(n - lam) < 1e-12:
            ramp = (t - s) * math.exp((n - lam) * s)
        else:
            ramp = (math.exp((n - lam) * t) - math.exp((n - lam) * s)) / (n - lam)
        return n * math.exp((lam - h) * t) * ramp * math.exp(-(n - h) * s)

    def beta(s):
        return math.exp((lam - h) * (t - s))

    def integrand(s):
        al = alpha(s)
        be = beta(s)
        return al * al * gamma_00(s) + 2.0 * al * be * gamma_0l(s) + be * be * gamma_ll(s)

    val, _ = quad(integrand, 0.0, t, limit=200, epsabs=1e-12, epsrel=1e-10)
    return float(val)


def classical_qv_mass(a0_mass: float, birth: float, death: float,
                      life_law, split_law, t: float) -> float:
    """Closed-form quadratic variation of the scaled mass martingale at t."""
    lm = life_law.mean
    sm, s2 = split_law.mean, split_law.second_moment
    n = birth * lm + death * sm
    w = birth * life_law.second_moment + death * s2
    rate = w + death - 2.0 * death * sm
    if abs(n - death) < 1e-12:
        return rate * a0_mass * t
    return rate / (n - death) * a0_mass * (math.exp((n - death) * t) - 1.0)


# ---------------------------------------------------------------------------
# quadratic-variation integrals on a solved background


def qv_integral_frames(model: RateModel, background: LimitSolution,
                       f: TestFunction, t: float) -> float:
    """QV of the scaled martingale for f at time t, trapezoid over frames."""
    return covariation_integral_frames(model, background, f, f, t)


def covariation_integral_frames(model: RateModel, background: LimitSolution,
                                f: TestFunction, g: TestFunction, t: float) -> float:
    """Quadratic covariation integral for (f, g) on the solved background.

    Uses the literal f(0), g(0) (this target is for the event-driven
    simulator's martingales, which deposit at age exactly zero), and the
    midpoint pairing against each stored frame.
    """
    ki = background.index_at(t)
    x = background.centers
    fv = np.asarray(f(x), dtype=float)
    gv = np.asarray(g(x), dtype=float)
    f0 = f.at_zero
    g0 = g.at_zero
    lm, l2 = model.life_law.mean, model.life_law.second_moment
    sm, s2 = model.split_law.mean, model.split_law.second_moment
    dx = background.dx
    vals = np.empty(ki + 1)
    ones = np.ones_like(x)
    for k in range(ki + 1):
        frame = GridDensity(dx=dx, values=background.values[k])
        b = np.asarray(model.birth_rate(x, frame), dtype=float) * ones
        h = np.asarray(model.death_rate(x, frame), dtype=float) * ones
        w = b * l2 + h * s2
        integrand = f0 * g0 * w + h * fv * gv - h * sm * (f0 * gv + g0 * fv)
        vals[k] = float(np.sum(integrand * background.values[k]) * dx)
    return float(np.trapezoid(vals, dx=background.dt))


# ---------------------------------------------------------------------------
# density-dependent closed-form fluctuation mean


def density_dependent_exp_mean(lam: float, z0_exp_pairing: float, z0_mass: float,
                               model: RateModel, background: LimitSolution,
                               t: float) -> float:
    """E[(e^(lam x), Z_t)] when the rates depend on the total mass only.

    Solves the two-dimensional linear mean system along the limit's total
    mass path: the mass fluctuation mean feeds the e^(lam x) mean through
    the derivative terms; both are reduced to explicit exponentials of
    cumulative integrals evaluated on the background time grid.
    """
    from .mvf import _rate_of_mass

    ki = background.index_at(t)
    dt = background.dt
    lm = model.life_law.mean
    sm = model.split_law.mean
    xs = background.totals[: ki + 1]
    times = background.times[: ki + 1]

    def nh(x_mass):
        b = _rate_of_mass(model.birth, x_mass)
        h = _rate_of_mass(model.death, x_mass)
        return b * lm + h * sm, h

    def nh_prime(x_mass):
        db = model.birth.fn.deriv(x_mass) if hasattr(model.birth, "fn") else 0.0
        dh = model.death.fn.deriv(x_mass) if hasattr(model.death, "fn") else 0.0
        return db * lm + dh * sm, dh

    n_vals = np.empty_like(xs)
    h_vals = np.empty_like(xs)
    np_vals = np.empty_like(xs)
    hp_vals = np.empty_like(xs)
    for i, xm in enumerate(xs):
        n_vals[i], h_vals[i] = nh(xm)
        np_vals[i], hp_vals[i] = nh_prime(xm)

    flam = np.array([
        background.dt * float(np.dot(background.values[i],
                                     np.exp(lam * background.centers)))
        for i in range(ki + 1)
    ])

    # cumulative integrals on the background grid (trapezoid)
    def cum(vals):
        out = np.zeros_like(vals)
        out[1:] = np.cumsum(0.5 * (vals[1:] + vals[:-1])) * dt
        return out

    h_cum = cum(h_vals)
    g_cum = cum(n_vals + (np_vals - hp_vals) * xs)
    phi = n_vals + np_vals * xs - hp_vals * flam
    inner = phi * np.exp(-lam * times + g_cum)
    inner_int = float(np.trapezoid(inner, dx=dt))
    return math.exp(lam * t - h_cum[-1]) * (z0_exp_pairing + z0_mass * inner_int)
