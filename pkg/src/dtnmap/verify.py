"""Empirical checks of the kernel bounds and operator estimates.

Every check returns an immutable report. Bound constants are fitted as the
maximal observed ratio (fit mode ``"max"``), so no grid point violates the
fitted bound by construction; what the checks assert is finiteness, decay
exponents and stability under mesh refinement.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .dtn import DtnOperator, schur_complement
from .fem import DiscreteForms
from .semigroup import (
    T_FLOOR,
    exp_weights,
    imaginary_power,
    kernel,
    linf_operator_norm,
    mg_operator_norm,
    schwartz_kernel,
    semigroup_matrix,
)

MAX_PAIRS = 100_000
POINTS_PER_DECADE = 24
# kernels are unresolved below a couple of boundary spacings
RESOLUTION_FACTOR = 2.0


def log_grid(lo: float, hi: float, per_decade: int = POINTS_PER_DECADE) -> np.ndarray:
    n = int(round(per_decade * math.log10(hi / lo))) + 1
    return np.logspace(math.log10(lo), math.log10(hi), max(n, 2))


def loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def resolution_floor(op: DtnOperator) -> float:
    spacing = np.linalg.norm(np.roll(op.points, -1, axis=0) - op.points, axis=1).max()
    return max(T_FLOOR, RESOLUTION_FACTOR * float(spacing))


def refinement_drift(coarse: float, fine: float) -> float:
    return abs(fine - coarse) / abs(coarse)


@dataclass(frozen=True)
class BoundReport:
    bound_id: str
    grid: dict
    fitted_c: float
    fit_mode: str
    fitted_decay: dict
    lambda1_used: float
    violation_fraction: float
    max_ratio: float
    slack: float
    t_floor: float
    details: dict = field(default_factory=dict)
    table: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("table")
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table_csv(self) -> str:
        if not self.table:
            return ""
        header = list(self.table[0])
        lines = [",".join(header)]
        lines += [",".join(_fmt(row[k]) for k in header) for row in self.table]
        return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


@dataclass(frozen=True)
class PairSample:
    """Boundary pairs: every diagonal pair plus all pairs in a seeded set of rows."""

    rows: np.ndarray
    n: int

    @property
    def count(self) -> int:
        return len(self.rows) * self.n + self.n


def sample_pairs(n: int, max_pairs: int = MAX_PAIRS, seed: int = 0) -> PairSample:
    """Evenly spaced rows with a seeded offset, as many as fit into ``max_pairs``."""
    n_rows = max(1, min(n, max_pairs // n - 1))
    if n_rows >= n:
        return PairSample(np.arange(n), n)
    offset = np.random.default_rng(seed).integers(n)
    rows = np.unique((offset + np.round(np.arange(n_rows) * n / n_rows).astype(int)) % n)
    return PairSample(rows, n)


def _ratio_sweep(op, zs, pairs: PairSample, exponent, dimension=2):
    """Max ratio of |K_z| to the Poisson profile over the sampled pairs."""
    rows_idx = pairs.rows
    dist_rows = np.linalg.norm(op.points[rows_idx][:, None, :] - op.points[None, :, :], axis=2)
    vr = op.vectors[rows_idx]
    sq = op.vectors**2
    rows = []
    for z in zs:
        z = complex(z)
        e = exp_weights(op.eigenvalues, z)
        if np.iscomplexobj(e):
            # two real products instead of one complex one
            block = np.hypot((vr * e.real) @ op.vectors.T, (vr * e.imag) @ op.vectors.T)
        else:
            block = np.abs((vr * e) @ op.vectors.T)
        diag = np.abs(sq @ e)
        re = z.real
        profile = min(1.0, re) ** (-(dimension - 1)) * math.exp(-op.lambda1 * re)
        r_block = block * (1.0 + dist_rows / abs(z)) ** exponent / profile
        r_diag = diag / profile
        k = np.unravel_index(int(np.argmax(r_block)), r_block.shape)
        if r_block[k] >= r_diag.max():
            best, w1, w2, dist = float(r_block[k]), int(rows_idx[k[0]]), int(k[1]), float(dist_rows[k])
        else:
            w = int(np.argmax(r_diag))
            best, w1, w2, dist = float(r_diag[w]), w, w, 0.0
        rows.append({"re_z": z.real, "im_z": z.imag, "max_ratio": best, "w1": w1, "w2": w2, "distance": dist})
    return rows


def diagonal_decay_slope(op: DtnOperator, window=(1e-3, 1e-1)) -> float:
    """Log-log slope of ``sup_w K_t(w, w)`` over the window."""
    ts = log_grid(*window)
    sq = op.vectors**2
    diag = np.array([(sq @ exp_weights(op.eigenvalues, t)).max() for t in ts])
    return loglog_slope(ts, diag)


def poisson_real(
    op: DtnOperator,
    t_grid: np.ndarray | None = None,
    slack: float = 0.0,
    seed: int = 0,
    max_pairs: int = MAX_PAIRS,
    slope_window=(1e-3, 1e-1),
) -> BoundReport:
    """Ratio of |K_t| to ``(t^1)^{-(d-1)} e^{-lambda1 t} (1 + |w1-w2|/t)^{-d}`` over a grid."""
    floor = resolution_floor(op)
    if t_grid is None:
        t_grid = log_grid(floor, 10.0)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        raise ValueError("empty time grid")
    if t_grid.min() < T_FLOOR:
        raise ValueError(f"time grid goes below the floor {T_FLOOR}")
    pairs = sample_pairs(op.size, max_pairs, seed)
    rows = _ratio_sweep(op, t_grid, pairs, exponent=2)
    return _report(
        "poisson_real",
        rows,
        op,
        slack,
        floor,
        grid={"t": t_grid.tolist(), "pairs": pairs.count, "seed": seed},
        decay={"diagonal_slope": diagonal_decay_slope(op, slope_window), "slope_window": list(slope_window)},
    )


def _report(bound_id, rows, op, slack, floor, grid, decay, details=None) -> BoundReport:
    ratios = np.array([r["max_ratio"] for r in rows])
    c = float(ratios.max())
    violations = float(np.mean(ratios > c * (1.0 + slack)))
    return BoundReport(
        bound_id=bound_id,
        grid=grid,
        fitted_c=c,
        fit_mode="max",
        fitted_decay=decay,
        lambda1_used=op.lambda1,
        violation_fraction=violations,
        max_ratio=c,
        slack=slack,
        t_floor=floor,
        details=details or {},
        table=rows,
    )


def sector_rays(theta: float, n_rays: int = 5, fraction: float = 0.95) -> np.ndarray:
    rays = np.linspace(-fraction * theta, fraction * theta, n_rays)
    rays[np.abs(rays) < 1e-15] = 0.0
    return rays


def poisson_sector(
    op: DtnOperator,
    theta: float,
    abs_grid: np.ndarray | None = None,
    rays: np.ndarray | None = None,
    slack: float = 0.0,
    seed: int = 0,
    max_pairs: int = MAX_PAIRS,
    exponent: float = 2.0,
) -> BoundReport:
    """Complex-time sweep of |K_z| against ``(1^Re z)^{-(d-1)} e^{-lambda1 Re z} (1+|w1-w2|/|z|)^{-exponent}``."""
    if not 0 < theta < math.pi / 2:
        raise ValueError(f"theta must lie in (0, pi/2), got {theta}")
    floor = resolution_floor(op)
    if abs_grid is None:
        abs_grid = log_grid(floor, 10.0)
    abs_grid = np.asarray(abs_grid, dtype=float)
    rays = sector_rays(theta) if rays is None else np.asarray(rays, dtype=float)
    if abs_grid.size == 0 or rays.size == 0:
        raise ValueError("empty sector grid")
    if np.abs(rays).max() >= theta:
        raise ValueError("grid point outside the sector")
    pairs = sample_pairs(op.size, max_pairs, seed)
    rows = []
    per_ray = {}
    for arg in rays:
        # exact real arithmetic on the arg = 0 ray
        zs = abs_grid.astype(complex) if arg == 0 else abs_grid * complex(math.cos(arg), math.sin(arg))
        ray_rows = _ratio_sweep(op, zs, pairs, exponent)
        for r in ray_rows:
            r["arg"] = float(arg)
        rows += ray_rows
        per_ray[f"{arg:.12g}"] = max(r["max_ratio"] for r in ray_rows)
    return _report(
        "poisson_sector",
        rows,
        op,
        slack,
        floor,
        grid={"abs_z": abs_grid.tolist(), "rays": rays.tolist(), "theta": theta, "pairs": pairs.count,
              "seed": seed},
        decay={"exponent": exponent},
        details={"per_ray_c": per_ray},
    )


def leading_cluster(op: DtnOperator, rel_tol: float = 1e-2) -> int:
    """Number of eigenvalues within ``rel_tol * max(1, |lambda1|)`` of lambda1.

    Symmetric domains give a multiple lambda1 that the mesh splits slightly.
    """
    lam = op.eigenvalues
    return int(np.count_nonzero(lam - lam[0] <= rel_tol * max(1.0, abs(lam[0]))))


def large_time_dominance(op: DtnOperator, t: float) -> float:
    """Relative deviation of K_t from its leading-eigenspace term ``e^{-lambda1 t} P1``."""
    K = kernel(op, t).values
    k = leading_cluster(op)
    V1 = op.vectors[:, :k]
    lead = (V1 * np.exp(-op.eigenvalues[:k] * t)) @ V1.T
    return float(np.abs(K - lead).max() / np.abs(lead).max())


@dataclass(frozen=True)
class ContinuityReport:
    t: list
    errors: dict
    slopes: dict


def strong_continuity(op: DtnOperator, test_fns: dict[str, np.ndarray], t_grid=None) -> ContinuityReport:
    """Sup-norm distance ``||S_t phi - phi||`` and its log-log rate per test function."""
    t_grid = log_grid(1e-3, 1e-1) if t_grid is None else np.asarray(t_grid, dtype=float)
    names = list(test_fns)
    stack = np.column_stack([test_fns[k] for k in names])
    coef = op.coefficients(stack)
    errors, slopes = {}, {}
    err = np.empty((len(t_grid), len(names)))
    for a, t in enumerate(t_grid):
        moved = op.synthesize(exp_weights(op.eigenvalues, t)[:, None] * coef)
        err[a] = np.abs(moved - stack).max(axis=0)
    for b, name in enumerate(names):
        errors[name] = err[:, b].tolist()
        positive = err[:, b] > 0
        scale = np.abs(stack[:, b]).max()
        if positive.sum() >= 2 and err[:, b].max() > 1e-12 * scale:
            slopes[name] = loglog_slope(t_grid[positive], err[positive, b])
        else:
            slopes[name] = math.inf
    return ContinuityReport(t=t_grid.tolist(), errors=errors, slopes=slopes)


def perturbation_rate(op_v: DtnOperator, op_0: DtnOperator, t_grid=None) -> dict:
    """``||S^V_t - S^0_t||`` against t; bounded perturbations give a linear rate."""
    t_grid = log_grid(1e-3, 1e-1) if t_grid is None else np.asarray(t_grid, dtype=float)
    diffs = np.array(
        [mg_operator_norm(op_0, semigroup_matrix(op_v, t) - semigroup_matrix(op_0, t)) for t in t_grid]
    )
    return {"t": t_grid.tolist(), "norms": diffs.tolist(), "constant": float((diffs / t_grid).max()),
            "slope": loglog_slope(t_grid, diffs)}


def perturbation_identity(forms_0: DiscreteForms, forms_v: DiscreteForms) -> float:
    """Relative Frobenius residual of ``N_V - (N_0 + E_0^T B E_V)``."""
    if forms_0.mesh is not forms_v.mesh and (
        forms_0.mesh.vertices.shape != forms_v.mesh.vertices.shape
        or not np.array_equal(forms_0.mesh.triangles, forms_v.mesh.triangles)
        or not np.array_equal(forms_0.mesh.vertices, forms_v.mesh.vertices)
    ):
        raise ValueError("perturbation identity needs both forms on the same mesh")
    if abs(forms_0.A0 - forms_v.A0).max() > 0:
        raise ValueError("perturbation identity needs identical coefficient matrices")
    N_v = schur_complement(forms_v)
    N_0 = schur_complement(forms_0)
    E_0 = forms_0.lifting_matrix
    E_v = forms_v.lifting_matrix
    Q = E_0.T @ (forms_v.B @ E_v)
    norm = np.linalg.norm(N_v)
    return float(np.linalg.norm(N_v - (N_0 + Q)) / norm)


def lipschitz_constant(points: np.ndarray, g: np.ndarray) -> float:
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    diff = np.abs(g[:, None] - g[None, :])
    off = dist > 0
    return float((diff[off] / dist[off]).max())


def commutator(op: DtnOperator, g: np.ndarray) -> np.ndarray:
    """``[N, M_g]`` on vertex values."""
    A = op.strong
    return A * g[None, :] - g[:, None] * A


@dataclass(frozen=True)
class CommutatorReport:
    c_emp: float
    ratios_l2: dict
    ratios_linf: dict
    lipschitz: dict
    constant_residuals: dict


def commutator_bound(op: DtnOperator, g_family: dict[str, np.ndarray]) -> CommutatorReport:
    if not g_family:
        raise ValueError("empty function family")
    ratios_l2, ratios_linf, lips, constants = {}, {}, {}, {}
    for name, g in g_family.items():
        g = np.asarray(g, dtype=float)
        C = commutator(op, g)
        lip = lipschitz_constant(op.points, g)
        if lip == 0.0:
            constants[name] = float(np.abs(C).max())
            continue
        lips[name] = lip
        ratios_l2[name] = mg_operator_norm(op, C) / lip
        ratios_linf[name] = linf_operator_norm(C) / lip
    if not ratios_l2:
        raise ValueError("function family has no nonconstant member")
    return CommutatorReport(
        c_emp=max(ratios_l2.values()),
        ratios_l2=ratios_l2,
        ratios_linf=ratios_linf,
        lipschitz=lips,
        constant_residuals=constants,
    )


def schwartz_kernel_bound(op: DtnOperator, exclusion: float = 4.0, dimension: int = 2) -> BoundReport:
    """Off-diagonal ``|K_N(w1, w2)| |w1-w2|^d`` over pairs at least ``exclusion * h`` apart."""
    K = schwartz_kernel(op)
    dist = np.linalg.norm(op.points[:, None, :] - op.points[None, :, :], axis=2)
    admissible = dist >= exclusion * op.h
    if not admissible.any():
        raise ValueError("mesh too coarse: no boundary pairs beyond the exclusion radius")
    i, j = np.nonzero(admissible)
    kv = np.abs(K[i, j])
    dv = dist[i, j]
    scaled = kv * dv**dimension
    c = float(scaled.max())
    k = int(np.argmax(scaled))
    slope = loglog_slope(dv, kv)
    rows = [{"distance": float(dv[k]), "kernel": float(kv[k]), "scaled": c}]
    return BoundReport(
        bound_id="schwartz_kernel",
        grid={"exclusion": exclusion, "h": op.h, "pairs": int(admissible.sum())},
        fitted_c=c,
        fit_mode="max",
        fitted_decay={"exponent": slope},
        lambda1_used=op.lambda1,
        violation_fraction=0.0,
        max_ratio=c,
        slack=0.0,
        t_floor=0.0,
        details={"diameter_bound": c / float(dist.max()) ** dimension,
                 "antipodal_max": float(np.abs(K[dist >= 0.999 * dist.max()]).max())},
        table=rows,
    )


@dataclass(frozen=True)
class SectorSchedule:
    """Angles of the sector-doubling induction and the per-step factor angles."""

    dimension: int
    target: float
    thetas: list
    factor_limits: list

    @property
    def steps(self) -> int:
        return len(self.thetas) - 1

    def factorize(self, arg_z0: float) -> tuple[float, float]:
        """Split ``arg z0`` into ``(arg z1, arg z2)`` with z1 in the previous sector."""
        a = abs(arg_z0)
        n = next(k for k, th in enumerate(self.thetas) if a < th)
        if n == 0:
            return arg_z0, 0.0
        ratio = self.thetas[n - 1] / self.thetas[n]
        z1 = arg_z0 * ratio
        return z1, arg_z0 - z1


def predicted_steps(dimension: int, theta_target: float) -> int:
    gap1 = math.pi / 2 - math.pi / (2 * dimension)
    return max(0, math.ceil(math.log(gap1 / (math.pi / 2 - theta_target)) / math.log(dimension / (dimension - 1))))


def sector_schedule(dimension: int, theta_target: float) -> SectorSchedule:
    if not 0 < theta_target < math.pi / 2:
        raise ValueError(f"theta_target must lie in (0, pi/2), got {theta_target}")
    if dimension < 2:
        raise ValueError("dimension must be at least 2")
    half = math.pi / 2
    thetas = [math.pi / (2 * dimension)]
    limits = []
    while thetas[-1] <= theta_target:
        step = (half - thetas[-1]) / dimension
        limits.append(step)
        thetas.append(thetas[-1] + step)
    return SectorSchedule(dimension, theta_target, thetas, limits)


def cauchy_riemann_residual(op: DtnOperator, z: complex, w1: int, w2: int, step: float) -> float:
    """|dK/dx + i dK/dy| at ``z = x + iy`` by central differences."""

    def K(zz):
        return ((op.vectors[w1] * op.vectors[w2]) * exp_weights(op.eigenvalues, zz)).sum()

    dx = (K(z + step) - K(z - step)) / (2 * step)
    dy = (K(z + 1j * step) - K(z - 1j * step)) / (2 * step)
    return abs(dx + 1j * dy)


def cauchy_riemann_order(op: DtnOperator, z: complex, w1: int, w2: int, step: float) -> float:
    r1 = cauchy_riemann_residual(op, z, w1, w2, step)
    r2 = cauchy_riemann_residual(op, z, w1, w2, step / 2)
    return math.log2(r1 / r2)


def semigroup_law_error(op: DtnOperator, z1: complex, z2: complex) -> float:
    lhs = semigroup_matrix(op, z1 + z2)
    rhs = semigroup_matrix(op, z1) @ semigroup_matrix(op, z2)
    return mg_operator_norm(op, lhs - rhs)


@dataclass(frozen=True)
class ImaginaryPowerReport:
    shift: float
    s: list
    norms_l2: list
    norms_linf: list
    nu: float


def imaginary_power_growth(op: DtnOperator, shift: float, s_values=(1.0, 2.0, 4.0, 8.0)) -> ImaginaryPowerReport:
    """Norms of ``(N + shift)^{is}``; ``nu`` is the fitted slope of log sup-norm against s."""
    s_values = np.asarray(s_values, dtype=float)
    l2, linf = [], []
    for s in s_values:
        P = imaginary_power(op, shift, s)
        l2.append(mg_operator_norm(op, P))
        linf.append(linf_operator_norm(P))
    nu = float(np.polyfit(s_values, np.log(linf), 1)[0])
    return ImaginaryPowerReport(shift, s_values.tolist(), l2, linf, nu)


def first_eigenvalues_error(op: DtnOperator, reference: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Relative errors against a reference sequence (absolute where the reference vanishes)."""
    lam = op.eigenvalues[: len(reference)] * radius
    ref = np.asarray(reference, dtype=float)
    scale = np.where(ref == 0, 1.0, np.abs(ref))
    return np.abs(lam - ref) / scale


def disk_reference_spectrum(count: int) -> np.ndarray:
    return np.array([(k + 1) // 2 for k in range(count)], dtype=float)


def generalized_eig_check(op: DtnOperator) -> dict:
    """Self-adjointness, orthonormality and eigen-reconstruction residuals."""
    N, MG, V, lam = op.N, op.MG, op.vectors, op.eigenvalues
    scale = np.abs(N).max()
    residual = np.abs(N @ V - (MG @ V) * lam).max(axis=0)
    recon = residual / (scale * np.abs(V).max(axis=0))
    return {
        "symmetry": float(np.abs(N - N.T).max() / scale),
        "orthonormality": float(np.abs(V.T @ MG @ V - np.eye(op.size)).max()),
        "reconstruction": float(recon.max()),
        "cond_mg": float(np.linalg.cond(scipy.linalg.cholesky(MG))),
    }
