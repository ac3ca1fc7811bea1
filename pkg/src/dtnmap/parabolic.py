"""Boundary evolution ``phi' + N phi = f`` solved exactly per eigenmode."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dtn import DtnOperator

_SERIES_CUTOFF = 1e-3


def phi_functions(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``exp(x)``, ``phi1(x) = (e^x - 1)/x`` and ``phi2(x) = (e^x - 1 - x)/x^2``, stable near 0."""
    x = np.asarray(x)
    ex = np.exp(x)
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    em1 = np.expm1(safe)
    phi1 = np.where(small, 1 + x / 2 + x**2 / 6 + x**3 / 24 + x**4 / 120, em1 / safe)
    phi2 = np.where(small, 0.5 + x / 6 + x**2 / 24 + x**3 / 120 + x**4 / 720, (em1 - safe) / safe**2)
    return ex, phi1, phi2


@dataclass(frozen=True, eq=False)
class EvolutionProblem:
    """``phi' + N phi = f`` on ``(0, tau]`` with ``phi(0) = phi0``.

    ``f`` is sampled on ``times`` (shape ``(n_t, m)``) or given as a callable
    of ``t`` returning a boundary vector; it is interpolated linearly in time.
    """

    op: DtnOperator
    f: np.ndarray | Callable[[float], np.ndarray] | None
    phi0: np.ndarray | None
    tau: float
    steps: int = 1000
    r: float = 2.0
    p: float = 2.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not (1 < self.r < np.inf and 1 < self.p < np.inf):
            raise ValueError("r and p must lie in (1, inf)")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.tau, self.steps + 1)

    def forcing_samples(self) -> np.ndarray:
        m = self.op.size
        t = self.times
        if self.f is None:
            return np.zeros((len(t), m))
        if callable(self.f):
            return np.array([np.asarray(self.f(tk)) for tk in t])
        f = np.asarray(self.f)
        if f.shape != (len(t), m):
            raise ValueError(f"forcing samples must have shape {(len(t), m)}, got {f.shape}")
        return f


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    phi: np.ndarray
    n_phi: np.ndarray
    dphi: np.ndarray
    forcing: np.ndarray
    weights: np.ndarray
    r: float
    p: float

    def norm(self, samples: np.ndarray) -> float:
        return lr_lp_norm(samples, self.times, self.weights, self.r, self.p)

    @property
    def summary(self) -> dict:
        return {
            "dphi": self.norm(self.dphi),
            "n_phi": self.norm(self.n_phi),
            "f": self.norm(self.forcing),
            "phi0": lp_norm(self.phi[0], self.weights, self.p) + lp_norm(self.n_phi[0], self.weights, self.p),
            "residual": self.norm(self.dphi + self.n_phi - self.forcing),
        }

    def to_csv(self) -> str:
        lines = ["t,vertex,value"]
        for k, t in enumerate(self.times):
            for i, v in enumerate(self.phi[k]):
                lines.append(f"{t:.17g},{i},{_fmt(v)}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if np.iscomplexobj(v):
        return f"{complex(v)!r}"
    return f"{float(v):.17g}"


def lp_norm(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    return float((weights * np.abs(values) ** p).sum() ** (1 / p))


def lr_lp_norm(samples: np.ndarray, times: np.ndarray, weights: np.ndarray, r: float, p: float) -> float:
    """Weighted vertex sums in space, composite trapezoid in time."""
    spatial = (np.abs(samples) ** p @ weights) ** (1 / p)
    return float(np.trapezoid(spatial**r, times) ** (1 / r))


def solve(problem: EvolutionProblem) -> Trajectory:
    """Duhamel formula per eigenmode, exact for forcing linear between time samples."""
    op = problem.op
    t = problem.times
    f = problem.forcing_samples()
    if problem.phi0 is None:
        phi0 = np.zeros(op.size)
    else:
        phi0 = np.asarray(problem.phi0)
        if phi0.shape != (op.size,):
            raise ValueError(f"phi0 must have shape {(op.size,)}, got {phi0.shape}")
    dtype = np.result_type(f, phi0, float)
    fc = op.coefficients(f.T).T
    a = np.empty((len(t), op.size), dtype=dtype)
    a[0] = op.coefficients(phi0)
    dt = np.diff(t)
    uniform = np.allclose(dt, dt[0])
    lam = op.eigenvalues
    if uniform:
        ex, p1, p2 = phi_functions(-lam * dt[0])
    for k in range(len(t) - 1):
        if not uniform:
            ex, p1, p2 = phi_functions(-lam * dt[k])
        h = dt[0] if uniform else dt[k]
        a[k + 1] = ex * a[k] + h * ((p1 - p2) * fc[k] + p2 * fc[k + 1])
    phi = op.synthesize(a.T).T
    n_phi = op.synthesize((lam * a).T).T
    dphi = op.synthesize((fc - lam * a).T).T
    return Trajectory(t, phi, n_phi, dphi, f, op.weights, problem.r, problem.p)


def single_mode_closed_form(lam: float, omega: float, t: np.ndarray) -> np.ndarray:
    """Coefficient of ``a' + lam a = exp(i omega t)``, ``a(0) = 0``."""
    return (np.exp(1j * omega * t) - np.exp(-lam * t)) / (lam + 1j * omega)


def band_limited_forcing(
    op: DtnOperator, seed: int, n_space: int = 4, n_freq: int = 3, max_freq: float = 4.0
) -> Callable[[float], np.ndarray]:
    """Random smooth forcing built from low boundary harmonics and a few temporal frequencies.

    Spatial profiles are trigonometric polynomials of the polar angle of the
    boundary points, so the same seed gives the same continuous forcing on
    every mesh.
    """
    rng = np.random.default_rng(seed)
    angle = np.arctan2(op.points[:, 1], op.points[:, 0])
    k = rng.integers(0, 4, size=n_space)
    phase_s = rng.uniform(0, 2 * np.pi, size=n_space)
    profiles = np.cos(np.outer(angle, k) + phase_s)
    omega = rng.uniform(0.0, max_freq, size=(n_space, n_freq))
    phase_t = rng.uniform(0, 2 * np.pi, size=(n_space, n_freq))
    amp = rng.standard_normal((n_space, n_freq))

    def f(t: float) -> np.ndarray:
        coef = (amp * np.cos(omega * t + phase_t)).sum(axis=1)
        return profiles @ coef

    return f


def max_regularity_ratio(trajectory: Trajectory) -> float:
    s = trajectory.summary
    return (s["dphi"] + s["n_phi"]) / s["f"]


@dataclass(frozen=True)
class MaxRegularityReport:
    r: float
    p: float
    tau: float
    c_emp: float
    ratios: list


def max_regularity_report(problems: list[EvolutionProblem]) -> MaxRegularityReport:
    """Largest ``(||phi'|| + ||N phi||) / ||f||`` over zero-initial-data problems."""
    if not problems:
        raise ValueError("empty problem family")
    ratios = []
    for problem in problems:
        if problem.phi0 is not None and np.any(problem.phi0 != 0):
            raise ValueError("maximal regularity ratios need zero initial data")
        ratios.append(max_regularity_ratio(solve(problem)))
    first = problems[0]
    return MaxRegularityReport(first.r, first.p, first.tau, max(ratios), ratios)


def forcing_family(
    op: DtnOperator, seeds, tau: float, steps: int, r: float = 2.0, p: float = 2.0
) -> list[EvolutionProblem]:
    return [EvolutionProblem(op, band_limited_forcing(op, s), None, tau, steps, r, p) for s in seeds]

