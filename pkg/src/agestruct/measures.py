"""Finite measures on the age interval [0, T*], in atomic and grid-density form.

Two concrete representations are used throughout the package:

* :class:`AtomicMeasure` -- a list of ages, each carrying the same weight
  (weight 1 for a raw population, 1/K for a normalised one).
* :class:`GridDensity` -- a density sampled at the centers of a uniform grid
  over [0, T*]; pairings use the midpoint rule, which matches the
  cell-centered transport scheme of the deterministic solver.

Fluctuation measures (atomic minus absolutely continuous, times sqrt(K)) are
kept lazy as :class:`SignedPair` so their pairings stay exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "DomainError",
    "AtomicMeasure",
    "GridDensity",
    "SignedPair",
    "TestFunction",
    "pair",
    "signed_diff",
    "make_panel",
    "constant",
    "monomial",
    "exponential",
    "bump",
]


class DomainError(ValueError):
    """An age or grid value falls outside the configured domain [0, T*]."""


_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class AtomicMeasure:
    """Ages with a common positive weight per atom.

    ``t_star`` is the support bound T* = T + a*; every age must lie in
    [0, T*].  Total mass is ``weight * len(ages)``.
    """

    ages: np.ndarray
    weight: float
    t_star: float

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=float)
        object.__setattr__(self, "ages", ages)
        if not self.weight > 0.0:
            raise ValueError(f"atom weight must be positive, got {self.weight}")
        if ages.size and (ages.min() < -_EDGE_TOL or ages.max() > self.t_star + _EDGE_TOL):
            raise DomainError(
                f"ages must lie in [0, {self.t_star}]; got range "
                f"[{ages.min()}, {ages.max()}]"
            )

    @property
    def count(self) -> int:
        return int(self.ages.size)

    @property
    def mass(self) -> float:
        return self.weight * self.ages.size

    def to_csv(self, path: Union[str, Path], sidecar: Union[str, Path, None] = None) -> None:
        """Write ages as CSV with header ``age`` plus a JSON sidecar with the weight."""
        path = Path(path)
        with path.open("w") as fh:
            fh.write("age\n")
            for a in self.ages:
                fh.write(f"{float(a)!r}\n")
        sidecar = Path(sidecar) if sidecar is not None else path.with_suffix(".json")
        sidecar.write_text(json.dumps({"weight": self.weight, "t_star": self.t_star}))

    @classmethod
    def from_csv(cls, path: Union[str, Path], sidecar: Union[str, Path, None] = None) -> "AtomicMeasure":
        path = Path(path)
        sidecar = Path(sidecar) if sidecar is not None else path.with_suffix(".json")
        meta = json.loads(sidecar.read_text())
        lines = path.read_text().strip().splitlines()
        ages = np.array([float(s) for s in lines[1:]], dtype=float)
        return cls(ages=ages, weight=float(meta["weight"]), t_star=float(meta["t_star"]))


@dataclass(frozen=True)
class GridDensity:
    """Density per unit age at cell centers x_j = (j + 1/2) dx, j = 0..J-1.

    The grid covers [0, J*dx] exactly; J*dx is the support bound T*.  Values
    may be negative only if ``signed`` is set.
    """

    dx: float
    values: np.ndarray
    signed: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if not self.dx > 0.0:
            raise ValueError("dx must be positive")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid density contains non-finite values")
        if not self.signed and values.size and values.min() < -_EDGE_TOL:
            raise DomainError(
                f"positive measure has negative density {values.min()}; "
                "construct with signed=True for signed measures"
            )

    @property
    def n_cells(self) -> int:
        return int(self.values.size)

    @property
    def t_star(self) -> float:
        return self.dx * self.values.size

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.values.size) + 0.5) * self.dx

    @property
    def mass(self) -> float:
        return float(self.dx * self.values.sum())

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], t_star: float,
                      dx: float, signed: bool = False) -> "GridDensity":
        """Sample ``fn`` at the cell centers of a grid covering [0, t_star]."""
        n = int(round(t_star / dx))
        if abs(n * dx - t_star) > _EDGE_TOL * max(1.0, t_star):
            raise ValueError(f"t_star={t_star} is not an integer multiple of dx={dx}")
        x = (np.arange(n) + 0.5) * dx
        return cls(dx=dx, values=np.asarray(fn(x), dtype=float), signed=signed)

    def to_csv(self, path: Union[str, Path]) -> None:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("x,value\n")
            for x, v in zip(self.centers, self.values):
                fh.write(f"{float(x)!r},{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path: Union[str, Path], signed: bool = False) -> "GridDensity":
        rows = Path(path).read_text().strip().splitlines()[1:]
        xs, vs = [], []
        for row in rows:
            x, v = row.split(",")
            xs.append(float(x))
            vs.append(float(v))
        if len(xs) < 1:
            raise ValueError("empty grid CSV")
        dx = 2.0 * xs[0]
        return cls(dx=dx, values=np.array(vs), signed=signed)


@dataclass(frozen=True)
class SignedPair:
    """Lazy signed measure ``scale * (plus - minus)``.

    Used for fluctuation measures sqrt(K)*(empirical - limit): densifying
    the atomic part would destroy the exact pairing identity, so pairings
    are always evaluated against both parts separately.
    """

    plus: AtomicMeasure
    minus: Union[GridDensity, AtomicMeasure]
    scale: float

    @property
    def mass(self) -> float:
        return self.scale * (self.plus.mass - self.minus.mass)

    def pair(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return self.scale * (pair(f, self.plus) - pair(f, self.minus))


Measure = Union[AtomicMeasure, GridDensity, SignedPair]


def pair(f: Callable[[np.ndarray], np.ndarray], mu: Measure) -> float:
    """Integral of ``f`` against ``mu``: atomic sum or midpoint rule."""
    if isinstance(mu, AtomicMeasure):
        if mu.ages.size == 0:
            return 0.0
        return float(mu.weight * np.sum(f(mu.ages)))
    if isinstance(mu, GridDensity):
        return float(mu.dx * np.dot(np.asarray(f(mu.centers), dtype=float), mu.values))
    if isinstance(mu, SignedPair):
        return mu.pair(f)
    raise TypeError(f"cannot pair against {type(mu).__name__}")


def signed_diff(mu: AtomicMeasure, rho: Union[GridDensity, AtomicMeasure],
                scale: float) -> SignedPair:
    """The signed measure ``scale * (mu - rho)`` as a lazy pair."""
    if not scale > 0.0:
        raise ValueError("scale must be positive")
    return SignedPair(plus=mu, minus=rho, scale=scale)


class TestFunction:
    """A smooth test function on [0, T*] with exact derivative.

    Kinds: ``constant`` (value c), ``monomial`` (x^k), ``exp`` (e^(lam*x)),
    and ``bump`` (smooth compactly supported bump on [lo, hi], peak 1,
    vanishing with all derivatives at the endpoints).
    """

    def __init__(self, kind: str, *, c: float = 1.0, k: int = 1, lam: float = 0.0,
                 lo: float = 0.0, hi: float = 1.0):
        self.kind = kind
        self.c = float(c)
        self.k = int(k)
        self.lam = float(lam)
        self.lo = float(lo)
        self.hi = float(hi)
        if kind not in ("constant", "monomial", "exp", "bump"):
            raise ValueError(f"unknown test function kind {kind!r}")
        if kind == "bump" and not hi > lo:
            raise ValueError("bump needs hi > lo")

    @property
    def label(self) -> str:
        if self.kind == "constant":
            return "1" if self.c == 1.0 else f"const({self.c:g})"
        if self.kind == "monomial":
            return "x" if self.k == 1 else f"x^{self.k}"
        if self.kind == "exp":
            return f"exp({self.lam:g})"
        return f"bump({self.lo:g},{self.hi:g})"

    def __repr__(self):
        return f"TestFunction<{self.label}>"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.c)
        if self.kind == "monomial":
            return x ** self.k
        if self.kind == "exp":
            return np.exp(self.lam * x)
        return self._bump(x)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(x)
        if self.kind == "monomial":
            if self.k == 0:
                return np.zeros_like(x)
            return self.k * x ** (self.k - 1)
        if self.kind == "exp":
            return self.lam * np.exp(self.lam * x)
        return self._bump_deriv(x)

    @property
    def at_zero(self) -> float:
        return float(self(np.array(0.0)))

    def _u(self, x):
        return (2.0 * x - (self.lo + self.hi)) / (self.hi - self.lo)

    def _bump(self, x):
        u = self._u(x)
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        ui = u[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui * ui))
        return out

    def _bump_deriv(self, x):
        u = self._u(x)
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        ui = u[inside]
        w = 1.0 - ui * ui
        out[inside] = np.exp(1.0 - 1.0 / w) * (-2.0 * ui / (w * w)) * (2.0 / (self.hi - self.lo))
        return out


def constant(c: float = 1.0) -> TestFunction:
    return TestFunction("constant", c=c)


def monomial(k: int) -> TestFunction:
    return TestFunction("monomial", k=k)


def exponential(lam: float) -> TestFunction:
    return TestFunction("exp", lam=lam)


def bump(lo: float, hi: float) -> TestFunction:
    return TestFunction("bump", lo=lo, hi=hi)


def _parse_spec(spec: str, t_star: float) -> TestFunction:
    spec = spec.strip()
    if spec in ("1", "const", "constant"):
        return constant(1.0)
    if spec == "x":
        return monomial(1)
    if spec.startswith("x^"):
        return monomial(int(spec[2:]))
    if spec.startswith("mono:"):
        return monomial(int(spec.split(":")[1]))
    if spec.startswith("exp:"):
        lam = float(spec.split(":")[1])
        if lam == 0.0:
            return constant(1.0)
        return exponential(lam)
    if spec.startswith("bump:"):
        _, lo, hi = spec.split(":")
        return bump(float(lo), float(hi))
    if spec == "bump":
        return bump(0.25 * t_star, 0.75 * t_star)
    raise ValueError(f"unknown test function spec {spec!r}")


def make_panel(specs: Union[Sequence[str], None] = None, *, t_star: float = 1.0) -> list[TestFunction]:
    """Build a test-function panel from compact string specs.

    ``None`` gives the default panel {1, x, x^2, e^(0.5x), e^(-x), bump}
    with the bump placed on the middle half of [0, t_star] so f(0) = 0.
    """
    if specs is None:
        specs = ["1", "x", "x^2", "exp:0.5", "exp:-1", "bump"]
    return [_parse_spec(s, t_star) for s in specs]


def panel_discrepancy(panel: Sequence[Callable], mu: Measure, nu: Measure) -> float:
    """Largest pairing gap max_f |(f, mu) - (f, nu)| over the given panel.

    The sup over all bounded test functions is not computable; this
    panel-restricted surrogate is what the toolkit exposes.
    """
    return max(abs(pair(f, mu) - pair(f, nu)) for f in panel)
