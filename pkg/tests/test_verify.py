import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtnmap import verify
from dtnmap.dtn import build_dtn
from dtnmap.fem import assemble, constant_potential, identity_coefficients, random_potential
from dtnmap.geometry import make_disk, triangulate


@pytest.fixture(scope="module")
def coarse_real(coarse):
    return verify.poisson_real(coarse.op)


def test_log_grid_density():
    g = verify.log_grid(1e-3, 10.0)
    assert g[0] == pytest.approx(1e-3) and g[-1] == pytest.approx(10.0)
    assert len(g) == 4 * verify.POINTS_PER_DECADE + 1
    np.testing.assert_allclose(np.diff(np.log10(g)), 1 / verify.POINTS_PER_DECADE)


def test_loglog_slope_recovers_power():
    x = np.logspace(-3, 0, 30)
    assert verify.loglog_slope(x, 3 * x**-1.7) == pytest.approx(-1.7, abs=1e-12)


def test_poisson_real_report_fields(coarse, coarse_real):
    rep = coarse_real
    assert rep.bound_id == "poisson_real"
    assert rep.fit_mode == "max"
    assert rep.fitted_c == rep.max_ratio and math.isfinite(rep.fitted_c)
    assert rep.violation_fraction == 0.0
    assert rep.lambda1_used == coarse.op.lambda1
    assert rep.t_floor == verify.resolution_floor(coarse.op)
    assert min(rep.grid["t"]) >= rep.t_floor * (1 - 1e-12)
    doc = json.loads(rep.to_json())
    assert doc["fitted_c"] == rep.fitted_c
    lines = rep.table_csv().splitlines()
    assert lines[0].split(",")[:3] == ["re_z", "im_z", "max_ratio"]
    assert len(lines) == len(rep.table) + 1


def test_poisson_real_is_deterministic(coarse, coarse_real):
    again = verify.poisson_real(coarse.op)
    assert again.max_ratio == coarse_real.max_ratio
    assert again.table == coarse_real.table


def test_poisson_real_errors(coarse):
    with pytest.raises(ValueError):
        verify.poisson_real(coarse.op, t_grid=[])
    with pytest.raises(ValueError):
        verify.poisson_real(coarse.op, t_grid=[1e-8, 1.0])


def test_slack_counts_no_violations_above_max(coarse):
    rep = verify.poisson_real(coarse.op, slack=0.1)
    assert rep.violation_fraction == 0.0


def test_disk_diagonal_slope_oracle():
    # K_t(w, w) = (1 + 2 sum e^{-nt}) / (2 pi) ~ 1/(pi t): slope -1 over [1e-3, 1e-1]
    t = verify.log_grid(1e-3, 1e-1)
    n = np.arange(1, 200000)
    diag = np.array([(1 + 2 * np.exp(-n * s).sum()) / (2 * math.pi) for s in t])
    assert verify.loglog_slope(t, diag) == pytest.approx(-1.0, abs=0.15)


def test_sample_pairs_contains_diagonal_and_respects_budget():
    pairs = verify.sample_pairs(400, max_pairs=10000, seed=3)
    assert pairs.count <= 10000 + 400
    assert pairs.count >= 10000 * 0.9
    same = verify.sample_pairs(400, max_pairs=10000, seed=3)
    np.testing.assert_array_equal(pairs.rows, same.rows)


def test_sector_zero_ray_matches_real_report(coarse, coarse_real):
    grid = np.asarray(coarse_real.grid["t"])
    rep = verify.poisson_sector(coarse.op, math.pi / 3, abs_grid=grid)
    assert abs(rep.details["per_ray_c"]["0"] - coarse_real.fitted_c) <= 1e-12
    assert rep.violation_fraction == 0.0
    assert len(rep.details["per_ray_c"]) == 5
    assert all(r["arg"] is not None for r in rep.table)


def test_nested_subsector_constant_is_smaller(coarse):
    rays = verify.sector_rays(math.pi / 3)
    full = verify.poisson_sector(coarse.op, math.pi / 3, rays=rays)
    sub = verify.poisson_sector(coarse.op, math.pi / 6, rays=rays[np.abs(rays) < math.pi / 6])
    assert sub.fitted_c <= full.fitted_c


def test_weaker_exponent_bound(coarse):
    theta = math.pi / 3
    d = 2
    eps = 1 / (2 * d)
    strong = verify.poisson_sector(coarse.op, theta, exponent=d)
    weak = verify.poisson_sector(coarse.op, theta, exponent=d * (1 - eps))
    zs = np.abs(np.asarray(strong.grid["abs_z"]))
    diam = 2.0
    factor = (1 + diam / zs.min()) ** (d * eps)
    assert weak.fitted_c <= strong.fitted_c * factor
    assert weak.fitted_c <= strong.fitted_c


def test_sector_errors(coarse):
    with pytest.raises(ValueError):
        verify.poisson_sector(coarse.op, math.pi / 2)
    with pytest.raises(ValueError):
        verify.poisson_sector(coarse.op, 0.5, rays=[0.0, 0.6])
    with pytest.raises(ValueError):
        verify.poisson_sector(coarse.op, 0.5, abs_grid=[])


def test_large_time_dominance(coarse):
    assert verify.large_time_dominance(coarse.op, 6.0) < 0.05
    assert verify.large_time_dominance(coarse.op, 2.0) > verify.large_time_dominance(coarse.op, 6.0)
    K = np.array([np.abs(verify.kernel(coarse.op, t).values).max() * math.exp(coarse.op.eigenvalues[1] * t)
                  for t in np.linspace(2, 6, 9)])
    assert np.isfinite(K).all() and K.max() / K.min() < 1e3


def test_large_time_with_degenerate_first_eigenvalue(coarse):
    op = build_dtn(assemble(coarse.mesh, identity_coefficients(constant_potential(-10.0))))
    assert verify.leading_cluster(op) == 2
    assert verify.large_time_dominance(op, 6.0) < 0.05


def test_continuity_of_constant_and_coordinate(coarse):
    op = coarse.op
    x = op.points[:, 0]
    rep = verify.strong_continuity(op, {"1": np.ones(op.size), "x": x})
    assert max(rep.errors["1"]) <= 1e-10
    assert rep.slopes["1"] == math.inf
    # x is (up to discretisation) the lambda = 1 eigenfunction: error (1 - e^{-lambda2 t}) |x|_inf
    t = np.asarray(rep.t)
    lam = op.eigenvalues[1]
    np.testing.assert_allclose(rep.errors["x"], (1 - np.exp(-lam * t)) * np.abs(x).max(), rtol=0.05)
    assert rep.slopes["x"] == pytest.approx(1.0, abs=0.02)


def test_continuity_of_quadratic(coarse):
    x = coarse.op.points[:, 0]
    rep = verify.strong_continuity(coarse.op, {"x2": x * x})
    assert rep.slopes["x2"] >= 0.45


def test_perturbation_identity_cases(coarse):
    assert verify.perturbation_identity(coarse.forms, coarse.forms) == 0.0
    for V in (constant_potential(1.0), random_potential(8)):
        forms_v = assemble(coarse.mesh, identity_coefficients(V))
        assert verify.perturbation_identity(coarse.forms, forms_v) <= 1e-10


def test_perturbation_identity_mesh_mismatch(coarse):
    other = assemble(triangulate(make_disk(), 0.15), identity_coefficients(constant_potential(1.0)))
    with pytest.raises(ValueError):
        verify.perturbation_identity(coarse.forms, other)


def test_perturbation_rate_is_linear(coarse):
    op_v = build_dtn(assemble(coarse.mesh, identity_coefficients(constant_potential(1.0))))
    rate = verify.perturbation_rate(op_v, coarse.op)
    assert rate["slope"] >= 0.9
    assert math.isfinite(rate["constant"])


def test_commutator_with_constant_is_zero(coarse):
    pts = coarse.op.points
    rep = verify.commutator_bound(coarse.op, {"x": pts[:, 0], "c": np.full(coarse.op.size, 3.0)})
    assert rep.constant_residuals == {"c": 0.0}
    assert math.isfinite(rep.c_emp) and rep.c_emp > 0
    assert set(rep.ratios_l2) == {"x"}


def test_commutator_errors(coarse):
    with pytest.raises(ValueError):
        verify.commutator_bound(coarse.op, {})
    with pytest.raises(ValueError):
        verify.commutator_bound(coarse.op, {"c": np.ones(coarse.op.size)})


def test_lipschitz_constant_of_linear_function():
    pts = np.random.default_rng(0).standard_normal((50, 2))
    assert verify.lipschitz_constant(pts, 3 * pts[:, 0] + 4 * pts[:, 1]) <= 5.0 + 1e-12


def test_schwartz_bound_on_disk(u1):
    rep = verify.schwartz_kernel_bound(u1.op)
    assert -2.4 <= rep.fitted_decay["exponent"] <= -1.6
    # the disk's DtN kernel is 1/(4 pi sin^2(ds/2)) = 1/(pi |w1 - w2|^2) off the diagonal
    assert rep.fitted_c == pytest.approx(1 / math.pi, rel=0.1)


def test_schwartz_bound_needs_admissible_pairs(coarse):
    with pytest.raises(ValueError):
        verify.schwartz_kernel_bound(coarse.op, exclusion=100.0)


def test_schedule_values():
    sched = verify.sector_schedule(2, 1.5)
    assert sched.thetas[0] == pytest.approx(math.pi / 4, abs=0)
    assert sched.thetas[1] == pytest.approx(3 * math.pi / 8, rel=1e-15)
    assert sched.steps == verify.predicted_steps(2, 1.5)
    assert np.all(np.diff(sched.thetas) > 0) and sched.thetas[-1] < math.pi / 2


@given(st.integers(2, 6), st.floats(0.1, 1.55))
@settings(max_examples=40, deadline=None)
def test_schedule_recurrence(d, target):
    sched = verify.sector_schedule(d, target)
    half = math.pi / 2
    for a, b in zip(sched.thetas, sched.thetas[1:]):
        assert half - b == pytest.approx((1 - 1 / d) * (half - a), rel=1e-12)
    assert sched.thetas[-1] > target
    assert sched.steps == verify.predicted_steps(d, target)


def test_schedule_factorization():
    sched = verify.sector_schedule(2, 1.5)
    z1, z2 = sched.factorize(1.2)
    assert z1 + z2 == pytest.approx(1.2)
    assert abs(z1) < sched.thetas[2]


def test_schedule_errors():
    with pytest.raises(ValueError):
        verify.sector_schedule(2, math.pi / 2)
    with pytest.raises(ValueError):
        verify.sector_schedule(1, 1.0)


def test_imaginary_power_growth_report(coarse):
    rep = verify.imaginary_power_growth(coarse.op, 1.0)
    np.testing.assert_allclose(rep.norms_l2, 1.0, atol=1e-10)
    assert math.isfinite(rep.nu)


def test_refinement_drift():
    assert verify.refinement_drift(2.0, 2.5) == pytest.approx(0.25)
