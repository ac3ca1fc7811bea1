"""Semigroup ``exp(-z N)`` at complex time, its kernel, imaginary powers and rotations."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .dtn import DtnOperator

T_FLOOR = 1e-6


@dataclass(frozen=True)
class SectorPoint:
    """Complex time ``z`` certified to lie strictly inside the sector ``|arg z| < theta``."""

    z: complex
    theta: float

    def __post_init__(self):
        if not 0 < self.theta < math.pi / 2:
            raise ValueError(f"sector half-angle must lie in (0, pi/2), got {self.theta}")
        if self.z == 0 or not abs(cmath.phase(self.z)) < self.theta:
            raise ValueError(f"z={self.z} is not inside the sector of half-angle {self.theta}")


def _as_complex(z) -> complex:
    if isinstance(z, SectorPoint):
        return complex(z.z)
    return complex(z)


def exp_weights(eigenvalues: np.ndarray, z) -> np.ndarray:
    """``exp(-lambda z)`` as modulus times (cos, sin) to keep conjugate symmetry exact."""
    z = _as_complex(z)
    modulus = np.exp(-eigenvalues * z.real)
    if z.imag == 0:
        return modulus
    angle = eigenvalues * z.imag
    return modulus * np.cos(angle) - 1j * (modulus * np.sin(angle))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Kernel values ``K_z(w_i, w_j)`` on the boundary vertices.

    ``weights`` are the arclength weights of the boundary measure.
    """

    z: complex
    values: np.ndarray
    weights: np.ndarray

    def row_integrals(self) -> np.ndarray:
        return self.values @ self.weights

    def to_csv(self) -> str:
        n = len(self.values)
        i, j = np.indices((n, n))
        vals = np.asarray(self.values, dtype=complex)
        rows = np.column_stack([i.ravel(), j.ravel(), vals.real.ravel(), vals.imag.ravel()])
        lines = ["w1,w2,re,im"]
        lines += [f"{int(a)},{int(b)},{c:.17g},{d:.17g}" for a, b, c, d in rows]
        return "\n".join(lines) + "\n"


def kernel(op: DtnOperator, z) -> KernelMatrix:
    """Heat kernel by the full eigen-expansion (no truncation)."""
    zc = _as_complex(z)
    if not zc.real > 0:
        raise ValueError(f"kernel requires Re z > 0, got z={zc}")
    e = exp_weights(op.eigenvalues, zc)
    values = (op.vectors * e) @ op.vectors.T
    return KernelMatrix(z=zc, values=values, weights=op.weights)


def apply_semigroup(op: DtnOperator, z, phi: np.ndarray) -> np.ndarray:
    zc = _as_complex(z)
    if zc.real < 0:
        raise ValueError(f"semigroup requires Re z >= 0, got z={zc}")
    e = exp_weights(op.eigenvalues, zc)
    coef = op.coefficients(phi)
    return op.synthesize(e.reshape((-1,) + (1,) * (coef.ndim - 1)) * coef)


def semigroup_matrix(op: DtnOperator, z) -> np.ndarray:
    """Matrix of ``S_z`` acting on boundary vertex values."""
    e = exp_weights(op.eigenvalues, _as_complex(z))
    return (op.vectors * e) @ (op.vectors.T @ op.MG)


def imaginary_power(op: DtnOperator, shift: float, s: float) -> np.ndarray:
    """Matrix of ``(N + shift)^{is}`` acting on boundary vertex values."""
    shifted = op.eigenvalues + shift
    if shifted.min() <= 0:
        raise ValueError(f"shift {shift} leaves a nonpositive eigenvalue {shifted.min():.6g}")
    power = np.exp(1j * s * np.log(shifted))
    return (op.vectors * power) @ (op.vectors.T @ op.MG)


def mg_operator_norm(op: DtnOperator, A: np.ndarray) -> float:
    """Operator norm of ``A`` on boundary vectors in the ``MG`` inner product."""
    # with MG = L L^T the norm equals the spectral norm of L^T A L^{-T}
    L = np.linalg.cholesky(op.MG)
    X = L.T @ A
    Y = np.linalg.solve(L, X.T).T
    return float(np.linalg.norm(Y, 2))


def linf_operator_norm(A: np.ndarray) -> float:
    """Discrete sup-norm operator norm on vertex values (maximal absolute row sum)."""
    return float(np.abs(A).sum(axis=1).max())


@dataclass(frozen=True, eq=False)
class RotatedGenerator:
    """``z0 * N`` for a unimodular ``z0`` in the open right half-plane."""

    op: DtnOperator
    z0: complex

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.z0 * self.op.eigenvalues

    def kernel(self, t: float) -> KernelMatrix:
        """Kernel of ``exp(-t z0 N)``."""
        return kernel(self.op, t * self.z0)

    def schwartz_kernel(self) -> np.ndarray:
        return self.z0 * schwartz_kernel(self.op)


def rotated_generator(op: DtnOperator, z0: complex) -> RotatedGenerator:
    z0 = complex(z0)
    if abs(abs(z0) - 1.0) > 1e-12:
        raise ValueError(f"z0 must be unimodular, |z0|={abs(z0)}")
    if not z0.real > 0:
        raise ValueError(f"z0 must lie in the open right half-plane, got {z0}")
    return RotatedGenerator(op, z0)


def schwartz_kernel(op: DtnOperator) -> np.ndarray:
    """Off-diagonal Schwartz kernel of the operator read off the weak matrix: ``N_ij / (w_i w_j)``."""
    return op.N / np.outer(op.weights, op.weights)
