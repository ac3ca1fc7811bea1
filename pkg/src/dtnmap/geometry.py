"""Smooth planar domains and boundary-conforming triangulations.

A domain is described by a closed parametric curve ``s -> (x(s), y(s))`` on
``[0, 2*pi)``. Triangulations keep every boundary vertex exactly on the curve
and carry arclength weights for the boundary measure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from matplotlib.path import Path
from scipy.spatial import Delaunay, cKDTree

TWO_PI = 2.0 * math.pi

CurveFn = Callable[[np.ndarray], np.ndarray]


class MeshingError(RuntimeError):
    """Raised when a triangulation cannot be produced or fails validation."""

    def __init__(self, message: str, location: np.ndarray | None = None):
        if location is not None:
            message = f"{message} near ({location[0]:.6g}, {location[1]:.6g})"
        super().__init__(message)
        self.location = location


@dataclass(frozen=True)
class SmoothDomain:
    """Planar domain bounded by a closed, simple, regular parametric curve.

    ``curve`` and ``derivative`` map an array of parameters of shape ``(n,)``
    to points of shape ``(n, 2)``. The curve is traversed counter-clockwise.
    """

    curve: CurveFn
    derivative: CurveFn
    name: str = "domain"
    smoothness: str = "C^inf"
    params: dict = field(default_factory=dict)
    dimension: int = 2

    def __call__(self, s) -> np.ndarray:
        return self.curve(np.atleast_1d(np.asarray(s, dtype=float)))

    def speed(self, s: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.derivative(np.atleast_1d(s)), axis=1)

    def length(self, samples: int = 8192) -> float:
        # periodic trapezoid rule: spectrally accurate for smooth closed curves
        s = np.arange(samples) * (TWO_PI / samples)
        return float(self.speed(s).sum() * (TWO_PI / samples))

    def arclength(self, s: np.ndarray, samples: int = 8192) -> np.ndarray:
        """Arclength from parameter 0 to each entry of ``s`` (in ``[0, 2*pi]``)."""
        s = np.asarray(s, dtype=float)
        # integrate the Fourier series of the speed exactly
        grid = np.arange(samples) * (TWO_PI / samples)
        coef = np.fft.rfft(self.speed(grid)) / samples
        k = np.arange(1, coef.size)
        mean = coef[0].real
        ck = coef[1:].copy()
        if samples % 2 == 0:
            ck[-1] *= 0.5
        significant = np.flatnonzero(np.abs(ck) > 1e-17 * abs(mean))
        cut = significant[-1] + 1 if significant.size else 0
        k, ck = k[:cut], ck[:cut]
        ss = s[..., None]
        periodic = 2.0 * (ck.real * np.sin(k * ss) + ck.imag * (np.cos(k * ss) - 1.0)) / k
        return mean * s + periodic.sum(axis=-1)

    def parameters_at_arclength(self, targets: np.ndarray, samples: int = 8192) -> np.ndarray:
        """Invert the arclength map by interpolation plus Newton polishing."""
        grid = np.linspace(0.0, TWO_PI, samples + 1)
        acc = self.arclength(grid, samples)
        s = np.interp(targets, acc, grid)
        for _ in range(4):
            s = s - (self.arclength(s, samples) - targets) / self.speed(s)
        return s

    def check(self, samples: int = 4096) -> None:
        """Validate closedness, regularity and simplicity on a dense sample."""
        ends = self.curve(np.array([0.0, TWO_PI]))
        dends = self.derivative(np.array([0.0, TWO_PI]))
        if np.abs(ends[0] - ends[1]).max() > 1e-12 or np.abs(dends[0] - dends[1]).max() > 1e-12:
            raise ValueError(f"{self.name}: curve is not closed to 1e-12")
        s = np.arange(samples) * (TWO_PI / samples)
        if self.speed(s).min() <= 0.0:
            raise ValueError(f"{self.name}: tangent vanishes")
        if not is_simple(self.curve(s)):
            raise ValueError(f"{self.name}: curve self-intersects")


def is_simple(points: np.ndarray) -> bool:
    """Dense pairwise-distance test for a closed sampled curve.

    Non-adjacent samples must stay further apart than the local sample spacing;
    a self-intersecting curve brings two distant arcs arbitrarily close.
    """
    n = len(points)
    seg = np.linalg.norm(np.roll(points, -1, axis=0) - points, axis=1)
    tree = cKDTree(points)
    radius = 0.5 * seg.max()
    for i, j in tree.query_pairs(radius, output_type="ndarray"):
        gap = min(abs(i - j), n - abs(i - j))
        if gap > 2:
            return False
    return True


def make_disk(radius: float = 1.0) -> SmoothDomain:
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")

    def curve(s):
        return radius * np.column_stack([np.cos(s), np.sin(s)])

    def derivative(s):
        return radius * np.column_stack([-np.sin(s), np.cos(s)])

    return SmoothDomain(curve, derivative, name="disk", params={"radius": radius})


def make_smooth_star(base_radius: float = 1.0, amplitude: float = 0.2, lobes: int = 3) -> SmoothDomain:
    """Star-shaped domain ``r(s) = base_radius * (1 + amplitude * cos(lobes * s))``."""
    if not base_radius > 0:
        raise ValueError(f"base_radius must be positive, got {base_radius}")
    if not 0.0 <= amplitude < 1.0:
        raise ValueError(f"amplitude must lie in [0, 1), got {amplitude}")
    if lobes < 0 or int(lobes) != lobes:
        raise ValueError(f"lobes must be a nonnegative integer, got {lobes}")
    lobes = int(lobes)

    def curve(s):
        r = base_radius * (1.0 + amplitude * np.cos(lobes * s))
        return np.column_stack([r * np.cos(s), r * np.sin(s)])

    def derivative(s):
        r = base_radius * (1.0 + amplitude * np.cos(lobes * s))
        dr = -base_radius * amplitude * lobes * np.sin(lobes * s)
        return np.column_stack([dr * np.cos(s) - r * np.sin(s), dr * np.sin(s) + r * np.cos(s)])

    return SmoothDomain(
        curve,
        derivative,
        name="star",
        params={"base_radius": base_radius, "amplitude": amplitude, "lobes": lobes},
    )


def make_domain(name: str, **params) -> SmoothDomain:
    if name == "disk":
        return make_disk(**params)
    if name == "star":
        return make_smooth_star(**params)
    raise ValueError(f"unknown domain {name!r} (expected 'disk' or 'star')")


@dataclass(frozen=True)
class Mesh:
    """Conforming P1 triangulation with an ordered boundary ring.

    ``boundary`` lists boundary vertex indices counter-clockwise,
    ``boundary_params`` their curve parameters, ``edge_arclength[k]`` the
    arclength of the curve between ring positions ``k`` and ``k+1`` and
    ``weights`` the per-vertex arclength weights (half the adjacent arcs).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    boundary_params: np.ndarray
    edge_arclength: np.ndarray
    weights: np.ndarray
    length: float

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    @property
    def boundary_points(self) -> np.ndarray:
        return self.vertices[self.boundary]

    @property
    def interior(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)

    @property
    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0)

    @property
    def h(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).max())

    @property
    def h_boundary(self) -> float:
        p = self.boundary_points
        return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).max())

    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    def to_dict(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary": self.boundary.tolist(),
            "boundary_params": self.boundary_params.tolist(),
            "edge_arclength": self.edge_arclength.tolist(),
            "weights": self.weights.tolist(),
            "length": self.length,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "Mesh":
        return cls(
            vertices=np.asarray(data["vertices"], dtype=float),
            triangles=np.asarray(data["triangles"], dtype=np.int64),
            boundary=np.asarray(data["boundary"], dtype=np.int64),
            boundary_params=np.asarray(data["boundary_params"], dtype=float),
            edge_arclength=np.asarray(data["edge_arclength"], dtype=float),
            weights=np.asarray(data["weights"], dtype=float),
            length=float(data["length"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "Mesh":
        return cls.from_dict(json.loads(text))


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


class _BoundaryDistance:
    """Signed distance to a densely sampled curve (negative inside).

    Distances beyond ``cap`` are not resolved (reported as +-cap); those
    points are classified with a coarse polygon instead.
    """

    def __init__(self, domain: SmoothDomain, samples: int, cap: float):
        s = np.arange(samples) * (TWO_PI / samples)
        self.points = domain.curve(s)
        tangent = domain.derivative(s)
        tangent /= np.linalg.norm(tangent, axis=1)[:, None]
        # counter-clockwise traversal: inward normal is the tangent rotated by +90 degrees
        self.inward = np.column_stack([-tangent[:, 1], tangent[:, 0]])
        self.tree = cKDTree(self.points)
        self.cap = cap
        self.coarse = Path(domain.curve(np.linspace(0.0, TWO_PI, 512, endpoint=False)))

    def __call__(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dist, idx = self.tree.query(p, distance_upper_bound=self.cap)
        far = ~np.isfinite(dist)
        idx = np.where(far, 0, idx)
        # the nearest sample approximates the foot point, so the offset is along the normal
        inside = np.einsum("ij,ij->i", p - self.points[idx], self.inward[idx]) > 0
        if far.any():
            inside[far] = self.coarse.contains_points(p[far])
            dist[far] = self.cap
        return np.where(inside, -dist, dist), idx

    def contains(self, p: np.ndarray) -> np.ndarray:
        return self(p)[0] < 0


def triangulate(
    domain: SmoothDomain,
    target_h: float,
    boundary_h: float | None = None,
    grading: float = 0.3,
    iterations: int = 60,
    seed: int = 0,
) -> Mesh:
    """Triangulate ``domain`` with interior edge length about ``target_h``.

    Boundary vertices are placed at equal arclength spacing (about
    ``boundary_h``, default ``target_h``) exactly on the curve. Interior
    vertices start on a jittered lattice and are relaxed by a spring-force
    smoother with the boundary held fixed; the local size grows linearly
    with the distance from the boundary at rate ``grading`` up to
    ``target_h``.
    """
    length = domain.length()
    diameter = _diameter(domain)
    if not 0 < target_h < diameter:
        raise ValueError(f"target_h must lie in (0, {diameter:.4g}), got {target_h}")
    hb = target_h if boundary_h is None else min(boundary_h, target_h)
    if not hb > 0:
        raise ValueError("boundary_h must be positive")

    nb = max(16, int(math.ceil(length / hb - 1e-9)))
    arc_targets = np.arange(nb) * (length / nb)
    params = domain.parameters_at_arclength(arc_targets)
    bpts = domain.curve(params)
    edge_arc = np.diff(np.append(domain.arclength(params), length))
    hb = length / nb

    def size(dist_inside: np.ndarray) -> np.ndarray:
        return np.minimum(target_h, hb + grading * np.maximum(dist_inside, 0.0))

    sdist = _BoundaryDistance(domain, samples=max(4096, 8 * nb), cap=4.0 * target_h)
    rng = np.random.default_rng(seed)

    # initial interior points: hexagonal lattice at the finest spacing, thinned to the size field
    lo = bpts.min(axis=0)
    hi = bpts.max(axis=0)
    h0 = hb
    ys = np.arange(lo[1], hi[1] + h0, h0 * math.sqrt(3) / 2)
    xs = np.arange(lo[0], hi[0] + h0, h0)
    gx, gy = np.meshgrid(xs, ys)
    gx = gx + 0.5 * h0 * (np.arange(len(ys))[:, None] % 2)
    cand = np.column_stack([gx.ravel(), gy.ravel()])
    d, _ = sdist(cand)
    cand, d = cand[d < 0], d[d < 0]
    hloc = size(-d)
    keep = (-d > 0.5 * hloc) & (rng.random(len(cand)) < (h0 / hloc) ** 2)
    interior = cand[keep]
    interior = interior + 0.05 * h0 * rng.standard_normal(interior.shape)

    nb_fixed = len(bpts)
    p = np.vstack([bpts, interior])
    p, tri = _relax(p, nb_fixed, sdist, size, hb, iterations)
    for _ in range(3):
        # split edges the relaxation left too long, then relax again
        bars = _bars(tri)
        d, _ = sdist(p)
        hv = size(-d)
        lengths = np.linalg.norm(p[bars[:, 0]] - p[bars[:, 1]], axis=1)
        long = lengths > 1.3 * 0.5 * (hv[bars[:, 0]] + hv[bars[:, 1]])
        if not long.any():
            break
        p = np.vstack([p, 0.5 * (p[bars[long, 0]] + p[bars[long, 1]])])
        p, tri = _relax(p, nb_fixed, sdist, size, hb, iterations // 2)

    mesh = _finalize(p, tri, nb_fixed, params, edge_arc, length)
    validate_mesh(mesh, domain)
    return mesh


def _bars(tri: np.ndarray) -> np.ndarray:
    return np.unique(np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]]), axis=1), axis=0)


def _relax(p, nb_fixed, sdist, size, hb, iterations, dt=0.2, fscale=1.2):
    """Spring-force smoothing with the first ``nb_fixed`` points held in place."""
    old = np.full_like(p, np.inf)
    d, idx = sdist(p)
    for _ in range(iterations):
        if np.sqrt(((p - old) ** 2).sum(axis=1)).max() > 0.1 * hb:
            old = p.copy()
            tri = _inside_triangles(p, sdist)
            bars = _bars(tri)
        hv = size(-d)
        vec = p[bars[:, 0]] - p[bars[:, 1]]
        lengths = np.linalg.norm(vec, axis=1)
        hbar = 0.5 * (hv[bars[:, 0]] + hv[bars[:, 1]])
        l0 = hbar * fscale * math.sqrt((lengths**2).sum() / (hbar**2).sum())
        force = np.maximum(l0 - lengths, 0.0)
        fvec = (force / lengths)[:, None] * vec
        move = np.zeros_like(p)
        np.add.at(move, bars[:, 0], fvec)
        np.add.at(move, bars[:, 1], -fvec)
        move[:nb_fixed] = 0.0
        p = p + dt * move
        d, idx = sdist(p)
        # keep interior vertices a fraction of the local size inside the curve
        depth = 0.35 * size(np.maximum(-d, 0.0))
        shallow = d > -depth
        shallow[:nb_fixed] = False
        if shallow.any():
            j = np.flatnonzero(shallow)
            p[j] = sdist.points[idx[j]] + depth[j, None] * sdist.inward[idx[j]]
            d[j] = -depth[j]
    return p, _inside_triangles(p, sdist)


def _diameter(domain: SmoothDomain) -> float:
    pts = domain.curve(np.linspace(0, TWO_PI, 512, endpoint=False))
    return float(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2).max())


def _inside_triangles(p: np.ndarray, sdist: _BoundaryDistance) -> np.ndarray:
    tri = Delaunay(p).simplices
    centroids = p[tri].mean(axis=1)
    return tri[sdist.contains(centroids)]


def _finalize(p, tri, nb, params, edge_arc, length) -> Mesh:
    tri = tri.astype(np.int64)
    area = signed_areas(p, tri)
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    used = np.zeros(len(p), dtype=bool)
    used[tri.ravel()] = True
    if not used[:nb].all():
        raise MeshingError("boundary vertex not attached to any triangle", p[np.flatnonzero(~used[:nb])[0]])
    # drop interior vertices orphaned by the inside filter
    remap = np.cumsum(used) - 1
    p = p[used]
    tri = remap[tri]
    weights = 0.5 * (edge_arc + np.roll(edge_arc, 1))
    return Mesh(
        vertices=p,
        triangles=tri,
        boundary=np.arange(nb, dtype=np.int64),
        boundary_params=np.asarray(params, dtype=float),
        edge_arclength=np.asarray(edge_arc, dtype=float),
        weights=weights,
        length=float(length),
    )


def validate_mesh(mesh: Mesh, domain: SmoothDomain | None = None) -> None:
    """Check orientation, conformity and boundary placement; raise MeshingError."""
    area = mesh.areas()
    if area.min() <= 0:
        k = int(np.argmin(area))
        raise MeshingError("degenerate or inverted triangle", mesh.vertices[mesh.triangles[k]].mean(axis=0))
    t = mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    if counts.max() > 2:
        k = int(np.argmax(counts))
        raise MeshingError("non-manifold edge", mesh.vertices[uniq[k]].mean(axis=0))
    boundary_edges = {tuple(x) for x in uniq[counts == 1]}
    ring = mesh.boundary
    ring_edges = {tuple(sorted((int(a), int(b)))) for a, b in zip(ring, np.roll(ring, -1))}
    if boundary_edges != ring_edges:
        bad = next(iter(boundary_edges ^ ring_edges))
        raise MeshingError("mesh boundary does not match the boundary ring", mesh.vertices[list(bad)].mean(axis=0))
    bp = mesh.boundary_points
    a, b = bp, np.roll(bp, -1, axis=0)
    if 0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]) <= 0:
        raise MeshingError("boundary ring is not counter-clockwise")
    if domain is not None:
        on_curve = domain.curve(mesh.boundary_params)
        err = np.linalg.norm(on_curve - bp, axis=1)
        if err.max() > 1e-10:
            raise MeshingError("boundary vertex off the curve", bp[int(np.argmax(err))])
        if abs(mesh.weights.sum() - domain.length()) > 1e-8:
            raise MeshingError("arclength weights do not sum to the curve length")
        # each ring edge must point along the curve's direction of travel
        align = np.einsum("ij,ij->i", b - a, domain.derivative(mesh.boundary_params))
        if align.min() <= 0:
            raise MeshingError("boundary ring ordering disagrees with the curve", bp[int(np.argmin(align))])
    if mesh.weights.min() <= 0:
        raise MeshingError("nonpositive arclength weight")
