"""Discrete Dirichlet-to-Neumann operator and its Steklov spectrum."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg

from .fem import DiscreteForms


@dataclass(frozen=True, eq=False)
class DtnOperator:
    """Boundary Schur complement ``N`` with its ``MG``-orthonormal eigenbasis.

    ``N`` is the weak operator (``phi . N chi`` is the energy pairing);
    the strong operator on boundary vertex values is ``MG^{-1} N``.
    Columns of ``vectors`` satisfy ``vectors.T @ MG @ vectors = I``.
    """

    N: np.ndarray
    MG: np.ndarray
    eigenvalues: np.ndarray
    vectors: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    h: float

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @cached_property
    def strong(self) -> np.ndarray:
        """Matrix of ``MG^{-1} N`` acting on boundary vertex values."""
        return self.vectors @ (self.eigenvalues[:, None] * (self.vectors.T @ self.MG))

    def coefficients(self, phi: np.ndarray) -> np.ndarray:
        """Expansion coefficients ``phi_n^T MG phi``."""
        return self.vectors.T @ (self.MG @ phi)

    def synthesize(self, coef: np.ndarray) -> np.ndarray:
        return self.vectors @ coef

    def export(self, stem: str | Path) -> None:
        """Write ``stem.bin`` (row-major little-endian float64) and ``stem.json``."""
        stem = Path(stem)
        np.ascontiguousarray(self.N, dtype="<f8").tofile(stem.with_suffix(".bin"))
        stem.with_suffix(".json").write_text(
            json.dumps({"rows": self.size, "cols": self.size, "dtype": "float64", "order": "row-major",
                        "endianness": "little"})
        )

    def spectrum_csv(self) -> str:
        lines = ["index,eigenvalue"]
        lines += [f"{i + 1},{lam:.17g}" for i, lam in enumerate(self.eigenvalues)]
        return "\n".join(lines) + "\n"


def load_operator_matrix(stem: str | Path) -> np.ndarray:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    data = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    return data.reshape(meta["rows"], meta["cols"])


def schur_complement(forms: DiscreteForms) -> np.ndarray:
    """``K_BB - K_BI K_II^{-1} K_IB`` for ``K = A0 + B``."""
    _, KIB, KBI, KBB = forms._blocks
    X = forms.interior_solver.solve(KIB.toarray())
    N = KBB - KBI @ X
    return 0.5 * (N + N.T)


def _normalize_signs(vectors: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    # first component that is clearly nonzero is made positive
    scale = np.abs(vectors).max(axis=0)
    significant = np.abs(vectors) > tol * scale
    first = np.argmax(significant, axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def build_dtn(forms: DiscreteForms) -> DtnOperator:
    N = schur_complement(forms)
    lam, vec = scipy.linalg.eigh(N, forms.MG)
    order = np.argsort(lam, kind="stable")
    return DtnOperator(
        N=N,
        MG=forms.MG,
        eigenvalues=lam[order],
        vectors=_normalize_signs(vec[:, order]),
        points=forms.mesh.boundary_points,
        weights=forms.mesh.weights,
        h=forms.mesh.h,
    )


def spectrum(op: DtnOperator, count: int) -> list[tuple[float, np.ndarray]]:
    if not 1 <= count <= op.size:
        raise ValueError(f"count must lie in [1, {op.size}], got {count}")
    return [(float(op.eigenvalues[n]), op.vectors[:, n]) for n in range(count)]


def apply_dtn(op: DtnOperator, phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi)
    if phi.shape[0] != op.size:
        raise ValueError(f"expected {op.size} boundary values, got {phi.shape[0]}")
    return op.synthesize(op.eigenvalues.reshape((-1,) + (1,) * (phi.ndim - 1)) * op.coefficients(phi))
