"""P1 assembly of the elliptic form, Dirichlet liftings and conormal derivatives."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Mesh

# 3-point rule on the reference triangle, exact for quadratics
_QUAD_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_QUAD_W = np.full(3, 1 / 3)

TOL_WELLPOSED = 1e-8
TOL_NEAR_SINGULAR = 1e-6


class EllipticityError(ValueError):
    """Coefficient matrix not symmetric or below the ellipticity constant."""


class IllPosedError(RuntimeError):
    """The Dirichlet problem is (numerically) singular."""


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric coefficient field ``c(x)`` and potential ``V(x)``.

    ``c`` maps points of shape ``(n, 2)`` to matrices ``(n, 2, 2)``, ``V``
    maps them to ``(n,)``. ``V=None`` means no potential.
    """

    c: Callable[[np.ndarray], np.ndarray]
    V: Callable[[np.ndarray], np.ndarray] | None = None
    mu: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def with_potential(self, V, name: str | None = None) -> "CoefficientField":
        return CoefficientField(self.c, V, self.mu, name or self.name, dict(self.params))


def identity_coefficients(V=None, name: str = "identity") -> CoefficientField:
    def c(x):
        return np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()

    return CoefficientField(c, V, mu=1.0, name=name)


def variable_coefficients(V=None) -> CoefficientField:
    """Smooth anisotropic field; the diagonal stays >= 1 and the off-diagonal is below 0.4."""

    def c(x):
        a = 1.5 + 0.5 * np.sin(2 * x[:, 0]) * np.cos(x[:, 1])
        b = 1.5 + 0.5 * np.cos(3 * x[:, 1])
        off = 0.4 * np.sin(x[:, 0] + x[:, 1])
        return np.stack([np.stack([a, off], -1), np.stack([off, b], -1)], -2)

    return CoefficientField(c, V, mu=0.6, name="variable")


def constant_potential(value: float):
    def V(x):
        return np.full(len(x), float(value))

    return V


def random_potential(seed: int = 0, amplitude: float = 2.0, modes: int = 4):
    """Smooth sign-changing potential: a random trigonometric polynomial with zero mean."""
    rng = np.random.default_rng(seed)
    k = rng.integers(-modes, modes + 1, size=(2 * modes, 2))
    k[np.all(k == 0, axis=1)] = [1, 0]
    phase = rng.uniform(0, 2 * np.pi, size=2 * modes)
    amp = rng.standard_normal(2 * modes)
    amp *= amplitude / np.abs(amp).sum()

    def V(x):
        return np.cos(x @ k.T + phase) @ amp

    return V


@dataclass(frozen=True, eq=False)
class DiscreteForms:
    """Assembled matrices on a mesh.

    ``A0`` is the stiffness of the coefficient field, ``B`` the potential
    mass, ``M`` the domain mass and ``MG`` the boundary mass in boundary-ring
    order. Boundary vectors are always indexed by ring position.
    """

    mesh: Mesh
    A0: sp.csr_matrix
    B: sp.csr_matrix
    M: sp.csr_matrix
    MG: np.ndarray
    mu: float
    has_potential: bool

    @property
    def boundary(self) -> np.ndarray:
        return self.mesh.boundary

    @property
    def interior(self) -> np.ndarray:
        return self.mesh.interior

    @cached_property
    def K(self) -> sp.csr_matrix:
        return (self.A0 + self.B).tocsr()

    @cached_property
    def _blocks(self):
        K = self.K
        ii = self.interior
        bb = self.boundary
        return (
            K[ii][:, ii].tocsc(),
            K[ii][:, bb].tocsc(),
            K[bb][:, ii].tocsr(),
            K[bb][:, bb].toarray(),
        )

    @cached_property
    def interior_solver(self):
        """Sparse LU of the interior block, factored once."""
        try:
            return spla.splu(self._blocks[0])
        except RuntimeError as exc:
            raise IllPosedError(f"singular interior block: {exc}") from exc

    @cached_property
    def lifting_matrix(self) -> np.ndarray:
        """Dense ``n_vertices x n_boundary`` matrix mapping boundary data to the discrete solution."""
        KII, KIB, _, _ = self._blocks
        E = np.zeros((self.mesh.n_vertices, self.mesh.n_boundary))
        E[self.boundary] = np.eye(self.mesh.n_boundary)
        E[self.interior] = -self.interior_solver.solve(KIB.toarray())
        return E

    @cached_property
    def _mg_cholesky(self):
        return scipy.linalg.cho_factor(self.MG)

    def solve_boundary_mass(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._mg_cholesky, rhs)

    def export_triplets(self) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """(row, col, value) triplets of every matrix, MatrixMarket style (0-based)."""
        out = {}
        for name, mat in (("A0", self.A0), ("B", self.B), ("M", self.M), ("MG", sp.coo_matrix(self.MG))):
            coo = sp.coo_matrix(mat)
            out[name] = (coo.row.copy(), coo.col.copy(), coo.data.copy())
        return out


def element_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric gradients ``(n_tri, 3, 2)`` and triangle areas."""
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    inv = np.empty((len(p), 2, 2))
    inv[:, 0, 0] = d2[:, 1] / det
    inv[:, 0, 1] = -d2[:, 0] / det
    inv[:, 1, 0] = -d1[:, 1] / det
    inv[:, 1, 1] = d1[:, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("ka,tab->tkb", ref, inv)
    return grads, 0.5 * det


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble(mesh: Mesh, coeff: CoefficientField) -> DiscreteForms:
    grads, area = element_gradients(mesh)
    corners = mesh.vertices[mesh.triangles]
    qpts = np.einsum("qk,tkd->tqd", _QUAD_BARY, corners).reshape(-1, 2)

    cq = np.asarray(coeff.c(qpts), dtype=float)
    if cq.shape != (len(qpts), 2, 2):
        raise EllipticityError(f"coefficient field returned shape {cq.shape}")
    asym = np.abs(cq[:, 0, 1] - cq[:, 1, 0])
    if asym.max() > 1e-14 * max(1.0, np.abs(cq).max()):
        k = int(np.argmax(asym))
        raise EllipticityError(f"coefficient matrix not symmetric at {qpts[k]}")
    eig_min = np.linalg.eigvalsh(cq).min(axis=1)
    if eig_min.min() < coeff.mu * (1 - 1e-12):
        k = int(np.argmin(eig_min))
        raise EllipticityError(
            f"ellipticity violated at {qpts[k]}: smallest eigenvalue {eig_min[k]:.6g} < mu={coeff.mu}"
        )

    cbar = np.einsum("q,tqab->tab", _QUAD_W, cq.reshape(-1, 3, 2, 2))
    local_A = area[:, None, None] * np.einsum("tia,tab,tjb->tij", grads, cbar, grads)
    A0 = _scatter(mesh, local_A)

    mass_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    M = _scatter(mesh, area[:, None, None] * mass_ref)

    if coeff.V is not None:
        vq = np.asarray(coeff.V(qpts), dtype=float).reshape(-1, 3)
        if not np.isfinite(vq).all():
            raise ValueError("potential is not bounded on the quadrature points")
        local_B = area[:, None, None] * np.einsum("q,tq,qi,qj->tij", _QUAD_W, vq, _QUAD_BARY, _QUAD_BARY)
        B = _scatter(mesh, local_B)
    else:
        B = sp.csr_matrix((mesh.n_vertices, mesh.n_vertices))

    return DiscreteForms(
        mesh=mesh,
        A0=A0,
        B=B,
        M=M,
        MG=boundary_mass(mesh),
        mu=coeff.mu,
        has_potential=coeff.V is not None,
    )


def boundary_mass(mesh: Mesh) -> np.ndarray:
    """Consistent P1 mass on the boundary ring, each edge weighted by its curve arclength.

    Row sums equal the arclength weights, so the discrete boundary measure is
    the same everywhere.
    """
    m = mesh.n_boundary
    ell = mesh.edge_arclength
    MG = np.zeros((m, m))
    i = np.arange(m)
    j = (i + 1) % m
    np.add.at(MG, (i, i), ell / 3)
    np.add.at(MG, (j, j), ell / 3)
    np.add.at(MG, (i, j), ell / 6)
    np.add.at(MG, (j, i), ell / 6)
    return MG


@dataclass(frozen=True)
class WellposednessReport:
    sigma_min: float
    sigma_max: float
    tolerance: float
    ill_posed: bool
    near_singular: bool

    @property
    def relative_gap(self) -> float:
        return abs(self.sigma_min) / abs(self.sigma_max)


def check_wellposedness(forms: DiscreteForms) -> WellposednessReport:
    """Smallest-magnitude eigenvalue of ``(A0 + B) u = eta M u`` on interior vertices.

    ``ill_posed`` uses the relative threshold ``1e-8 * |sigma_max|``;
    ``near_singular`` is the looser ``1e-6`` warning level.
    """
    ii = forms.interior
    K = forms.K[ii][:, ii].tocsc()
    M = forms.M[ii][:, ii].tocsc()
    # fixed start vector: ARPACK's default one carries state between calls
    v0 = np.ones(len(ii))
    sigma_max = spla.eigsh(K, k=1, M=M, which="LM", v0=v0, return_eigenvectors=False)[0]
    try:
        vals = spla.eigsh(K, k=1, M=M, sigma=0.0, which="LM", v0=v0, return_eigenvectors=False)
        sigma_min = float(vals[0])
    except RuntimeError:
        # exactly singular: the shift-invert factorization fails
        sigma_min = 0.0
    tol = TOL_WELLPOSED * abs(sigma_max)
    return WellposednessReport(
        sigma_min=sigma_min,
        sigma_max=float(sigma_max),
        tolerance=tol,
        ill_posed=abs(sigma_min) < tol,
        near_singular=abs(sigma_min) < TOL_NEAR_SINGULAR * abs(sigma_max),
    )


def lift(forms: DiscreteForms, boundary_values: np.ndarray) -> np.ndarray:
    """Discrete solution with zero interior residual and the given boundary trace."""
    phi = np.asarray(boundary_values)
    if phi.shape[0] != forms.mesh.n_boundary:
        raise ValueError(f"expected {forms.mesh.n_boundary} boundary values, got {phi.shape[0]}")
    _, KIB, _, _ = forms._blocks
    u = np.zeros((forms.mesh.n_vertices,) + phi.shape[1:], dtype=np.result_type(phi, float))
    u[forms.boundary] = phi
    u[forms.interior] = -forms.interior_solver.solve(np.asarray(KIB @ phi))
    return u


def conormal(forms: DiscreteForms, u: np.ndarray) -> np.ndarray:
    """Weak conormal derivative: solve ``MG psi = (K u)`` restricted to boundary rows."""
    r = forms.K @ u
    return forms.solve_boundary_mass(r[forms.boundary])


def interior_residual(forms: DiscreteForms, u: np.ndarray) -> float:
    r = (forms.K @ u)[forms.interior]
    return float(np.linalg.norm(r))
