import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtnmap import verify
from dtnmap.dtn import apply_dtn
from dtnmap.semigroup import (
    SectorPoint,
    apply_semigroup,
    exp_weights,
    imaginary_power,
    kernel,
    linf_operator_norm,
    mg_operator_norm,
    rotated_generator,
    schwartz_kernel,
    semigroup_matrix,
)

sector_z = st.builds(
    lambda r, a: cmath.rect(r, a),
    st.floats(1e-2, 5.0),
    st.floats(-1.4, 1.4),
)


def mg_norm(op, v):
    return math.sqrt(abs(np.vdot(v, op.MG @ v)))


def test_sector_point_membership():
    SectorPoint(1 + 0.5j, math.pi / 3)
    with pytest.raises(ValueError):
        SectorPoint(1 + 2j, math.pi / 4)
    with pytest.raises(ValueError):
        SectorPoint(0j, math.pi / 4)
    with pytest.raises(ValueError):
        SectorPoint(1.0, math.pi / 2)


def test_kernel_rejects_closed_half_plane(coarse):
    with pytest.raises(ValueError):
        kernel(coarse.op, 0.0)
    with pytest.raises(ValueError):
        kernel(coarse.op, 1j)
    with pytest.raises(ValueError):
        kernel(coarse.op, -0.5 + 0.1j)


def test_row_integrals_are_one(u1):
    for t in (1e-3, 1e-2, 1e-1, 1.0, 5.0):
        np.testing.assert_allclose(kernel(u1.op, t).row_integrals(), 1.0, atol=1e-8)


def test_diagonal_matches_disk_fourier_oracle(u1):
    diag = np.diag(kernel(u1.op, 1.0).values)
    oracle = (1 + 2 / (math.e - 1)) / (2 * math.pi)
    np.testing.assert_allclose(diag, oracle, rtol=0.02)


def test_kernel_tends_to_identity(coarse):
    op = coarse.op
    s = np.arctan2(op.points[:, 1], op.points[:, 0])
    phi = np.cos(s) + 0.5 * np.sin(2 * s)
    errs = [np.abs(kernel(op, t).values @ (op.weights * phi) - phi).max() for t in (1e-1, 1e-2, 1e-3)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.02


@given(sector_z)
@settings(max_examples=25, deadline=None)
def test_kernel_symmetry_and_conjugation(coarse, z):
    K = kernel(coarse.op, z).values
    assert np.abs(K - K.T).max() <= 1e-9
    np.testing.assert_array_equal(kernel(coarse.op, z.conjugate()).values, np.conj(K))


def test_eigenvector_evolution(coarse):
    op = coarse.op
    z = 0.3 + 0.2j
    for n in (1, 4, 10):
        out = apply_semigroup(op, z, op.vectors[:, n])
        np.testing.assert_allclose(out, np.exp(-op.eigenvalues[n] * z) * op.vectors[:, n], atol=1e-12)


@given(st.floats(-20, 20))
@settings(max_examples=25, deadline=None)
def test_imaginary_times_are_unitary(coarse, s):
    rng = np.random.default_rng(1)
    phi = rng.standard_normal(coarse.op.size)
    out = apply_semigroup(coarse.op, complex(0, s), phi)
    assert mg_norm(coarse.op, out) == pytest.approx(mg_norm(coarse.op, phi), rel=1e-10)


def test_constants_are_invariant(coarse):
    one = np.ones(coarse.op.size)
    for t in (0.01, 1.0, 10.0):
        np.testing.assert_allclose(apply_semigroup(coarse.op, t, one), 1.0, atol=1e-10)


def test_semigroup_law(coarse):
    rng = np.random.default_rng(11)
    for _ in range(10):
        z1, z2 = (cmath.rect(rng.uniform(0.01, 2), rng.uniform(-1, 1)) for _ in range(2))
        assert verify.semigroup_law_error(coarse.op, z1, z2) <= 1e-10


def test_derivative_consistency(coarse):
    op = coarse.op
    s = np.arctan2(op.points[:, 1], op.points[:, 0])
    phi = np.exp(np.cos(s))
    t = 0.2
    st_phi = apply_semigroup(op, t, phi)
    target = -apply_dtn(op, st_phi)
    errs = []
    for eps in (1e-3, 5e-4):
        fd = (apply_semigroup(op, t + eps, phi) - st_phi) / eps
        errs.append(np.abs(fd - target).max())
    assert errs[0] < 1e-2
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)


def test_cauchy_riemann_second_order(coarse):
    order = verify.cauchy_riemann_order(coarse.op, 0.4 + 0.3j, 3, 17, 4e-3)
    assert order >= 1.9


def test_exp_weights_modulus_phase():
    lam = np.array([0.0, 1.0, 5.0])
    z = 0.3 - 0.7j
    np.testing.assert_allclose(exp_weights(lam, z), np.exp(-lam * z), rtol=1e-15)
    np.testing.assert_array_equal(exp_weights(lam, z.conjugate()), np.conj(exp_weights(lam, z)))


def test_imaginary_power_at_zero_is_identity(coarse):
    P = imaginary_power(coarse.op, 1.0, 0.0)
    assert np.abs(P - np.eye(coarse.op.size)).max() <= 1e-12


@pytest.mark.parametrize("s", [1.0, 2.0, 4.0, 8.0])
def test_imaginary_power_is_unitary(coarse, s):
    P = imaginary_power(coarse.op, 1.0, s)
    assert mg_operator_norm(coarse.op, P) == pytest.approx(1.0, abs=1e-10)
    assert linf_operator_norm(P) >= 1.0 - 1e-12


def test_imaginary_power_rejects_nonpositive_shift(coarse):
    with pytest.raises(ValueError):
        imaginary_power(coarse.op, 0.0, 1.0)


def test_mg_norm_of_semigroup_is_contraction(coarse):
    assert mg_operator_norm(coarse.op, semigroup_matrix(coarse.op, 0.5)) == pytest.approx(1.0, abs=1e-12)


def test_rotated_generator(coarse):
    op = coarse.op
    same = rotated_generator(op, 1.0)
    np.testing.assert_array_equal(same.eigenvalues, op.eigenvalues)
    z0 = cmath.exp(0.6j)
    rot = rotated_generator(op, z0)
    t = 0.7
    np.testing.assert_allclose(rot.kernel(t).values, kernel(op, t * z0).values, atol=1e-12)
    np.testing.assert_allclose(np.abs(rot.schwartz_kernel()), np.abs(schwartz_kernel(op)), rtol=1e-15)
    with pytest.raises(ValueError):
        rotated_generator(op, 2.0)
    with pytest.raises(ValueError):
        rotated_generator(op, 1j)


def test_kernel_csv(coarse):
    text = kernel(coarse.op, 0.5 + 0.1j).to_csv().splitlines()
    assert text[0] == "w1,w2,re,im"
    assert len(text) == coarse.op.size**2 + 1
