"""Demographic rates and their dependence on the population measure.

A model bundles a per-capita birth rate and death rate (each a function of
age and of the normalised population measure), one offspring law for births
during life and one for splitting at death, and declared sup bounds used by
the thinning simulator.  Four built-in families are provided, ordered by
generality of the population dependence:

* ``classical``          -- constant rates;
* ``density_dependent``  -- rates are functions of the total mass only;
* ``age_density``        -- separable functions of age and total mass;
* ``kernel_linear``      -- functions of age, total mass and a kernel
  average ``(g(x, .), A)``.

Each family carries its own closed-form directional (Frechet) derivative
with respect to the measure, which drives the fluctuation-limit solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .measures import AtomicMeasure, GridDensity, SignedPair, TestFunction

__all__ = [
    "ModelError",
    "OffspringLaw",
    "ScalarFn",
    "AgeProfile",
    "Kernel",
    "ConstantRate",
    "DensityRate",
    "AgeDensityRate",
    "KernelRate",
    "RateModel",
    "RateValues",
    "eval_rates",
    "eval_limit_rates",
    "frechet",
    "apply_generator",
    "sample_offspring",
    "measure_mass",
    "kernel_pair",
    "classical_model",
    "pure_splitting",
]

_TOL = 1e-9


class ModelError(RuntimeError):
    """A rate evaluation violated the model contract (sign or sup bound)."""


# ---------------------------------------------------------------------------
# offspring laws


@dataclass(frozen=True)
class OffspringLaw:
    """Integer offspring-count law with explicit mean and second moment.

    All laws have bounded support (``cap``); the Poisson law is truncated at
    the cap, which is set far enough out that the declared moments hold to
    well below Monte Carlo resolution.
    """

    kind: str  # "deterministic" | "poisson" | "two_point"
    k: int = 0
    rate: float = 0.0
    p: float = 0.5
    k1: int = 0
    k2: int = 0
    cap: int = 0

    @classmethod
    def deterministic(cls, k: int) -> "OffspringLaw":
        return cls(kind="deterministic", k=int(k), cap=int(k))

    @classmethod
    def poisson(cls, mean: float, cap: Optional[int] = None) -> "OffspringLaw":
        if mean < 0:
            raise ValueError("poisson mean must be nonnegative")
        if cap is None:
            cap = int(math.ceil(mean + 12.0 * math.sqrt(mean + 1.0) + 12.0))
        return cls(kind="poisson", rate=float(mean), cap=int(cap))

    @classmethod
    def two_point(cls, p: float, k1: int, k2: int) -> "OffspringLaw":
        if not 0.0 <= p <= 1.0:
            raise ValueError("two_point probability must be in [0, 1]")
        return cls(kind="two_point", p=float(p), k1=int(k1), k2=int(k2),
                   cap=max(int(k1), int(k2)))

    @property
    def mean(self) -> float:
        if self.kind == "deterministic":
            return float(self.k)
        if self.kind == "poisson":
            return self.rate
        return self.p * self.k1 + (1.0 - self.p) * self.k2

    @property
    def second_moment(self) -> float:
        if self.kind == "deterministic":
            return float(self.k) ** 2
        if self.kind == "poisson":
            return self.rate + self.rate ** 2
        return self.p * self.k1 ** 2 + (1.0 - self.p) * self.k2 ** 2

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "deterministic":
            return self.k
        if self.kind == "poisson":
            return min(int(rng.poisson(self.rate)), self.cap)
        return self.k1 if rng.random() < self.p else self.k2

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "deterministic":
            return np.full(size, self.k, dtype=np.int64)
        if self.kind == "poisson":
            return np.minimum(rng.poisson(self.rate, size=size), self.cap)
        return np.where(rng.random(size) < self.p, self.k1, self.k2).astype(np.int64)


def sample_offspring(law: OffspringLaw, rng: np.random.Generator) -> int:
    """Draw one offspring count; always an integer in [0, cap]."""
    return law.sample(rng)


# ---------------------------------------------------------------------------
# parameter building blocks


@dataclass(frozen=True)
class ScalarFn:
    """Scalar function of the total mass X: constant c, or affine a + b*X."""

    kind: str
    a: float = 0.0
    b: float = 0.0

    @classmethod
    def constant(cls, c: float) -> "ScalarFn":
        return cls(kind="constant", a=float(c))

    @classmethod
    def affine(cls, a: float, b: float) -> "ScalarFn":
        return cls(kind="affine", a=float(a), b=float(b))

    def __call__(self, x_mass: float) -> float:
        if self.kind == "constant":
            return self.a
        return self.a + self.b * x_mass

    def deriv(self, x_mass: float) -> float:
        if self.kind == "constant":
            return 0.0
        return self.b


@dataclass(frozen=True)
class AgeProfile:
    """Bounded age profile r(x): constant, exponential decay, or Gaussian hump."""

    kind: str
    c: float = 1.0
    alpha: float = 0.0
    center: float = 0.0
    sigma: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.c)
        if self.kind == "exp_decay":
            return self.c * np.exp(-self.alpha * x)
        if self.kind == "gaussian":
            return self.c * np.exp(-((x - self.center) ** 2) / (2.0 * self.sigma ** 2))
        raise ValueError(f"unknown age profile kind {self.kind!r}")


@dataclass(frozen=True)
class Kernel:
    """Interaction kernel g(x, y) on [0, T*]^2."""

    kind: str
    c: float = 1.0
    alpha: float = 1.0
    sigma: float = 1.0

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            return np.broadcast_to(np.float64(self.c), np.broadcast_shapes(x.shape, y.shape)).copy()
        if self.kind == "exp_decay":
            return self.c * np.exp(-self.alpha * np.abs(x - y))
        if self.kind == "gaussian":
            return self.c * np.exp(-((x - y) ** 2) / (2.0 * self.sigma ** 2))
        raise ValueError(f"unknown kernel kind {self.kind!r}")


# ---------------------------------------------------------------------------
# measure adapters (all measure-likes expose .mass; views may add fast paths)


def measure_mass(mu) -> float:
    return float(mu.mass)


def kernel_pair(kernel: Kernel, xs, mu):
    """(g(x, .), mu) evaluated for each x in xs."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if hasattr(mu, "kernel_pair"):
        return mu.kernel_pair(kernel, xs)
    if isinstance(mu, AtomicMeasure):
        if mu.ages.size == 0:
            return np.zeros_like(xs)
        return mu.weight * kernel(xs[:, None], mu.ages[None, :]).sum(axis=1)
    if isinstance(mu, GridDensity):
        g = kernel(xs[:, None], mu.centers[None, :])
        return mu.dx * (g @ mu.values)
    if isinstance(mu, SignedPair):
        return mu.scale * (kernel_pair(kernel, xs, mu.plus) - kernel_pair(kernel, xs, mu.minus))
    raise TypeError(f"cannot form kernel pairing with {type(mu).__name__}")


# ---------------------------------------------------------------------------
# rate families


class ConstantRate:
    """Age- and population-independent rate (the classical family)."""

    family = "classical"

    def __init__(self, value: float):
        if value < 0:
            raise ModelError(f"constant rate must be nonnegative, got {value}")
        self.value = float(value)

    is_constant = True

    def eval(self, x, mu):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, self.value) if x.ndim else self.value

    def frechet(self, x, mu0, direction):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x) if x.ndim else 0.0

    def frechet_terms(self, xs, mu0):
        return np.zeros_like(np.asarray(xs, dtype=float)), None, None

    def sup(self) -> float:
        return self.value


class DensityRate:
    """Rate q(|A|): depends on the total mass only."""

    family = "density_dependent"
    is_constant = False

    def __init__(self, fn: ScalarFn):
        self.fn = fn

    def eval(self, x, mu):
        x = np.asarray(x, dtype=float)
        v = self.fn(measure_mass(mu))
        return np.full_like(x, v) if x.ndim else v

    def frechet_terms(self, xs, mu0):
        xs = np.asarray(xs, dtype=float)
        u = np.full_like(xs, self.fn.deriv(measure_mass(mu0)))
        return u, None, None

    def frechet(self, x, mu0, direction):
        u, _, _ = self.frechet_terms(np.atleast_1d(x), mu0)
        out = u * measure_mass(direction)
        return out if np.asarray(x).ndim else float(out[0])


class AgeDensityRate:
    """Separable rate r(x) * s(|A|)."""

    family = "age_density"
    is_constant = False

    def __init__(self, age: AgeProfile, fn: ScalarFn):
        self.age = age
        self.fn = fn

    def eval(self, x, mu):
        return self.age(x) * self.fn(measure_mass(mu))

    def frechet_terms(self, xs, mu0):
        xs = np.asarray(xs, dtype=float)
        u = self.age(xs) * self.fn.deriv(measure_mass(mu0))
        return u, None, None

    def frechet(self, x, mu0, direction):
        u, _, _ = self.frechet_terms(np.atleast_1d(x), mu0)
        out = u * measure_mass(direction)
        return out if np.asarray(x).ndim else float(out[0])


class KernelRate:
    """Rate r(x) * phi(|A|, (g(x,.), A)) with an explicit kernel g.

    Supported phi forms (y = total mass, z = kernel average):

    * ``affine``  -- c0 + cy*y + cz*z
    * ``special`` -- d0 + d1 * z / (1 + y)
    * ``inv1p``   -- c / (1 + y)
    """

    family = "kernel_linear"
    is_constant = False

    def __init__(self, kernel: Kernel, phi: str, *, age: Optional[AgeProfile] = None,
                 c0: float = 0.0, cy: float = 0.0, cz: float = 0.0,
                 d0: float = 0.0, d1: float = 0.0, c: float = 0.0):
        if phi not in ("affine", "special", "inv1p"):
            raise ValueError(f"unknown kernel-rate form {phi!r}")
        self.kernel = kernel
        self.phi = phi
        self.age = age if age is not None else AgeProfile(kind="constant", c=1.0)
        self.c0, self.cy, self.cz = float(c0), float(cy), float(cz)
        self.d0, self.d1 = float(d0), float(d1)
        self.c = float(c)

    def _phi(self, y, z):
        if self.phi == "affine":
            return self.c0 + self.cy * y + self.cz * z
        if self.phi == "special":
            return self.d0 + self.d1 * z / (1.0 + y)
        return self.c / (1.0 + y)

    def _phi_y(self, y, z):
        if self.phi == "affine":
            return self.cy * np.ones_like(z)
        if self.phi == "special":
            return -self.d1 * z / (1.0 + y) ** 2
        return -self.c / (1.0 + y) ** 2 * np.ones_like(z)

    def _phi_z(self, y, z):
        if self.phi == "affine":
            return self.cz * np.ones_like(z)
        if self.phi == "special":
            return self.d1 / (1.0 + y) * np.ones_like(z)
        return np.zeros_like(z)

    def eval(self, x, mu):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        y = measure_mass(mu)
        z = kernel_pair(self.kernel, xs, mu)
        out = self.age(xs) * self._phi(y, z)
        return out if np.asarray(x).ndim else float(out[0])

    def frechet_terms(self, xs, mu0):
        xs = np.asarray(xs, dtype=float)
        y = measure_mass(mu0)
        z = kernel_pair(self.kernel, xs, mu0)
        r = self.age(xs)
        return r * self._phi_y(y, z), r * self._phi_z(y, z), self.kernel

    def frechet(self, x, mu0, direction):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        u, w3, kern = self.frechet_terms(xs, mu0)
        out = u * measure_mass(direction) + w3 * kernel_pair(kern, xs, direction)
        return out if np.asarray(x).ndim else float(out[0])


RateFn = Union[ConstantRate, DensityRate, AgeDensityRate, KernelRate]


# ---------------------------------------------------------------------------
# the model


@dataclass(frozen=True)
class RateModel:
    """Demographic sextuple: birth/death rates plus the two offspring laws.

    ``birth_sup`` and ``death_sup`` are the declared sup bounds used by the
    thinning simulator; every rate evaluation must stay within them.  The
    optional ``k_perturbation(name, x, K)`` hook adds a K-dependent term of
    size o(1/sqrt(K)) to the named rate; the built-in families are
    K-independent so the finite-K and limit parameterisations coincide.
    """

    family: str
    birth: RateFn
    death: RateFn
    life_law: OffspringLaw
    split_law: OffspringLaw
    birth_sup: float
    death_sup: float
    k_perturbation: Optional[Callable[[str, np.ndarray, int], np.ndarray]] = None

    def birth_rate(self, x, mu, k: Optional[int] = None):
        v = self.birth.eval(x, mu)
        if k is not None and self.k_perturbation is not None:
            v = v + self.k_perturbation("birth", np.asarray(x, dtype=float), k)
        return v

    def death_rate(self, x, mu, k: Optional[int] = None):
        v = self.death.eval(x, mu)
        if k is not None and self.k_perturbation is not None:
            v = v + self.k_perturbation("death", np.asarray(x, dtype=float), k)
        return v


@dataclass(frozen=True)
class RateValues:
    """All rates at one (age, measure) evaluation point.

    ``newborn`` is the combined intensity of new individuals
    (birth * life-brood mean + death * split-brood mean); ``newborn_m2`` is
    its second-moment counterpart, which drives the fluctuation noise.
    """

    birth: Union[float, np.ndarray]
    death: Union[float, np.ndarray]
    life_mean: float
    life_m2: float
    split_mean: float
    split_m2: float
    newborn: Union[float, np.ndarray]
    newborn_m2: Union[float, np.ndarray]


def _check_bounds(name: str, value, sup: float):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size and (arr.min() < -_TOL or arr.max() > sup * (1.0 + _TOL) + _TOL):
        raise ModelError(
            f"{name} rate {float(arr.min()):g}..{float(arr.max()):g} violates "
            f"declared bounds [0, {sup}]"
        )


def eval_rates(model: RateModel, x, mu, k: Optional[int] = None) -> RateValues:
    """Evaluate the full rate record at age(s) x and population measure mu."""
    b = model.birth_rate(x, mu, k)
    h = model.death_rate(x, mu, k)
    _check_bounds("birth", b, model.birth_sup)
    _check_bounds("death", h, model.death_sup)
    lm, l2 = model.life_law.mean, model.life_law.second_moment
    sm, s2 = model.split_law.mean, model.split_law.second_moment
    return RateValues(
        birth=b, death=h,
        life_mean=lm, life_m2=l2, split_mean=sm, split_m2=s2,
        newborn=b * lm + h * sm,
        newborn_m2=b * l2 + h * s2,
    )


def eval_limit_rates(model: RateModel, x, mu) -> RateValues:
    """Rates of the limit family (K -> infinity): the K-hook is dropped."""
    return eval_rates(model, x, mu, k=None)


def frechet(model: RateModel, which: str, mu0, direction, x):
    """Directional derivative of the named limit rate at mu0 in ``direction``.

    ``which`` is one of "birth", "death", "newborn"; the newborn intensity
    differentiates through both channels with the (constant) brood means.
    """
    if which in ("birth", "b"):
        return model.birth.frechet(x, mu0, direction)
    if which in ("death", "h"):
        return model.death.frechet(x, mu0, direction)
    if which in ("newborn", "n"):
        db = model.birth.frechet(x, mu0, direction)
        dh = model.death.frechet(x, mu0, direction)
        return db * model.life_law.mean + dh * model.split_law.mean
    raise ValueError(f"unknown rate selector {which!r}")


def apply_generator(model: RateModel, f: TestFunction, mu) -> Callable:
    """The transport-death-renewal generator applied to f at measure mu.

    Returns x -> f'(x) - death(x) f(x) + f(0) * newborn(x).
    """
    f0 = f.at_zero

    def lf(x):
        vals = eval_limit_rates(model, x, mu)
        return f.deriv(x) - vals.death * f(x) + f0 * vals.newborn

    return lf


# ---------------------------------------------------------------------------
# convenience constructors


def classical_model(birth: float, death: float, life_law: OffspringLaw,
                    split_law: OffspringLaw,
                    k_perturbation=None) -> RateModel:
    return RateModel(
        family="classical",
        birth=ConstantRate(birth), death=ConstantRate(death),
        life_law=life_law, split_law=split_law,
        birth_sup=float(birth), death_sup=float(death),
        k_perturbation=k_perturbation,
    )


def pure_splitting(death: float, brood: int) -> RateModel:
    """No births during life; splitting into a fixed brood at death."""
    return classical_model(
        birth=0.0, death=death,
        life_law=OffspringLaw.deterministic(0),
        split_law=OffspringLaw.deterministic(brood),
    )
