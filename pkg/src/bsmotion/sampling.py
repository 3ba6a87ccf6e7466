"""Surface sampling, barycentric attribute transfer, FPS and KNN."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .validation import check_points

__all__ = [
    "DEFAULT_SAMPLE_COUNT",
    "MeshSequence",
    "SampledSurface",
    "face_areas",
    "face_normals",
    "vertex_normals",
    "sample_surface",
    "interpolate_attributes",
    "farthest_point_sample",
    "knn",
    "knn_brute_force",
]

DEFAULT_SAMPLE_COUNT = 20_000

# Faces with area below this fraction of the largest are treated as degenerate.
_DEGENERATE_REL_AREA = 1e-14
# Brute-force KNN below this many points; above it a k-d tree proposes candidates.
_BRUTE_KNN_MAX = 2048


@dataclass
class MeshSequence:
    """Initial mesh ``V0, F0`` plus per-frame vertex displacements ``(T, n_v, 3)``."""

    base_vertices: np.ndarray
    faces: np.ndarray
    deltas: np.ndarray = None
    vertex_normals: np.ndarray = None
    sequence_id: str = ""

    def __post_init__(self):
        self.base_vertices = check_points(self.base_vertices, 3, "base_vertices")
        faces = np.asarray(self.faces)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must be (n_f, 3), got {faces.shape}")
        if faces.size and not np.issubdtype(faces.dtype, np.integer):
            if not np.all(faces == np.round(faces)):
                raise ValueError("face indices must be integers")
        faces = faces.astype(np.int64)
        n_v = len(self.base_vertices)
        if faces.size and (faces.min() < 0 or faces.max() >= n_v):
            raise ValueError("face index out of range")
        self.faces = faces
        if self.deltas is None:
            self.deltas = np.zeros((1, n_v, 3))
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if self.deltas.ndim != 3 or self.deltas.shape[1:] != (n_v, 3):
            raise ValueError(
                f"deltas must be (T, {n_v}, 3), got {self.deltas.shape}"
            )
        if self.vertex_normals is not None:
            self.vertex_normals = check_points(self.vertex_normals, 3, "vertex_normals")
            if len(self.vertex_normals) != n_v:
                raise ValueError("vertex_normals must have one row per vertex")

    @property
    def vertex_count(self):
        return len(self.base_vertices)

    @property
    def frame_count(self):
        return self.deltas.shape[0]

    def frame(self, t):
        return self.base_vertices + self.deltas[t]


@dataclass
class SampledSurface:
    """Dense surface samples with unit normals and barycentric provenance."""

    points: np.ndarray
    normals: np.ndarray
    face_indices: np.ndarray
    barycentric: np.ndarray
    faces: np.ndarray = field(repr=False)
    vertex_count: int = 0
    seed: int | None = None

    def __len__(self):
        return len(self.points)


def _corners(vertices, faces):
    return vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]


def face_areas(vertices, faces):
    a, b, c = _corners(vertices, faces)
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def face_normals(vertices, faces):
    """Unit normals following the winding ``(v1 - v0) x (v2 - v0)``; zero for slivers."""
    a, b, c = _corners(vertices, faces)
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)


def vertex_normals(vertices, faces):
    """Area-weighted average of incident face normals, normalized."""
    a, b, c = _corners(vertices, faces)
    # The unnormalized cross product is already weighted by twice the area.
    n = np.cross(b - a, c - a)
    acc = np.zeros_like(vertices)
    for corner in range(3):
        np.add.at(acc, faces[:, corner], n)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)


def sample_surface(mesh, count=DEFAULT_SAMPLE_COUNT, seed=0, normal_mode="auto"):
    """Area-weighted uniform samples on the initial mesh.

    Parameters
    ----------
    mesh : MeshSequence
    count : int
        Number of samples ``N``.
    seed : int
        Seed of the PCG64 generator; the same seed gives bitwise-identical output.
    normal_mode : {"auto", "flat"}
        ``"auto"`` interpolates vertex normals (provided ones, else area-weighted
        averages) and falls back to the face normal where that cancels out.

    Returns
    -------
    SampledSurface
    """
    count = int(count)
    if count < 1:
        raise ValueError("count must be >= 1")
    if normal_mode not in ("auto", "flat"):
        raise ValueError(f"unknown normal_mode {normal_mode!r}")
    V = mesh.base_vertices
    F = mesh.faces
    if len(F) == 0:
        raise ValueError("mesh has no faces")
    areas = face_areas(V, F)
    max_area = areas.max()
    usable = areas > _DEGENERATE_REL_AREA * max_area if max_area > 0 else areas > 0
    if not np.any(usable):
        raise ValueError("mesh has only degenerate (zero-area) faces")
    weights = np.where(usable, areas, 0.0)
    rng = np.random.Generator(np.random.PCG64(seed))
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    face_idx = np.searchsorted(cdf, rng.random(count), side="right")
    face_idx = np.minimum(face_idx, len(F) - 1)
    r1 = rng.random(count)
    r2 = rng.random(count)
    s = np.sqrt(r1)
    bary = np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)
    corners = V[F[face_idx]]
    points = np.einsum("ni,nij->nj", bary, corners)

    flat = face_normals(V, F)[face_idx]
    if normal_mode == "flat":
        normals = flat
    else:
        vn = mesh.vertex_normals if mesh.vertex_normals is not None else vertex_normals(V, F)
        normals = np.einsum("ni,nij->nj", bary, vn[F[face_idx]])
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        ok = norm[:, 0] > 1e-12
        normals = np.where(ok[:, None], normals / np.where(ok, norm[:, 0], 1.0)[:, None], flat)
    return SampledSurface(
        points=points,
        normals=normals,
        face_indices=face_idx.astype(np.int64),
        barycentric=bary,
        faces=F,
        vertex_count=mesh.vertex_count,
        seed=seed,
    )


def interpolate_attributes(surface, per_vertex_field, axis=0):
    """Barycentric transfer of a per-vertex field to the sampled points.

    ``axis`` names the vertex axis of the field, so a control grid
    ``(k, n_v, 3)`` is transferred with ``axis=1`` to ``(k, N, 3)``.
    """
    field_ = np.asarray(per_vertex_field, dtype=np.float64)
    moved = np.moveaxis(field_, axis, 0)
    if moved.shape[0] != surface.vertex_count:
        raise ValueError(
            f"field has {moved.shape[0]} vertex rows, mesh has {surface.vertex_count}"
        )
    tri = surface.faces[surface.face_indices]
    w = surface.barycentric
    out = np.zeros((len(tri),) + moved.shape[1:])
    w_shape = (len(tri),) + (1,) * (moved.ndim - 1)
    for corner in range(3):
        out += w[:, corner].reshape(w_shape) * moved[tri[:, corner]]
    return np.moveaxis(out, 0, axis)


def farthest_point_sample(points, n_samples, start_index=0, normals=None,
                          normal_weight=0.0, return_distances=False):
    """Greedy max-min subset of ``n_samples`` indices.

    Each step picks the point whose distance to the already selected set is
    largest, lowest index on ties.  With ``normals`` and a positive
    ``normal_weight`` the search runs in 6-D on ``[xyz, w * normal]``.

    Returns
    -------
    indices : ndarray of int
    distances : ndarray, optional
        Min-distance of each chosen point to the prefix before it (``inf`` for
        the start point).
    """
    X = check_points(points, name="points")
    if normals is not None and normal_weight:
        N = check_points(normals, X.shape[1], "normals")
        X = np.concatenate([X, normal_weight * N], axis=1)
    P = len(X)
    n_samples = int(n_samples)
    if not 1 <= n_samples <= P:
        raise ValueError(f"n_samples must be in [1, {P}], got {n_samples}")
    if not 0 <= start_index < P:
        raise ValueError("start_index out of range")
    selected = np.empty(n_samples, dtype=np.int64)
    achieved = np.empty(n_samples)
    selected[0] = start_index
    achieved[0] = np.inf
    mind = np.sqrt(np.sum((X - X[start_index]) ** 2, axis=1))
    taken = np.zeros(P, dtype=bool)
    taken[start_index] = True
    for j in range(1, n_samples):
        cand = np.where(taken, -1.0, mind)
        idx = int(np.argmax(cand))
        selected[j] = idx
        achieved[j] = mind[idx]
        taken[idx] = True
        np.minimum(mind, np.sqrt(np.sum((X - X[idx]) ** 2, axis=1)), out=mind)
    if return_distances:
        return selected, achieved
    return selected


def _sorted_neighbors(X, rows, cand, K):
    d2 = np.sum((X[rows][:, None, :] - X[cand]) ** 2, axis=-1)
    d2[cand == rows[:, None]] = np.inf
    order = np.lexsort((cand, d2), axis=-1)
    cand = np.take_along_axis(cand, order, axis=-1)
    d2 = np.take_along_axis(d2, order, axis=-1)
    return cand[:, :K], d2


def knn_brute_force(points, K, chunk=256):
    """All-pairs KNN, self excluded, ties broken by lowest index."""
    X = check_points(points, name="points")
    P = len(X)
    K = int(K)
    if not 1 <= K < P:
        raise ValueError(f"K must be in [1, {P - 1}], got {K}")
    out = np.empty((P, K), dtype=np.int64)
    all_idx = np.arange(P)
    for start in range(0, P, chunk):
        rows = all_idx[start:start + chunk]
        cand = np.broadcast_to(all_idx, (len(rows), P))
        out[rows], _ = _sorted_neighbors(X, rows, cand, K)
    return out


def knn(points, K):
    """``K`` nearest neighbours of every point (self excluded).

    Semantics are those of :func:`knn_brute_force`.  Large clouds use a k-d tree
    to propose candidates; any row whose K-th distance is not clearly inside
    the candidate radius is redone by brute force.
    """
    X = check_points(points, name="points")
    P = len(X)
    K = int(K)
    if not 1 <= K < P:
        raise ValueError(f"K must be in [1, {P - 1}], got {K}")
    if P <= _BRUTE_KNN_MAX:
        return knn_brute_force(X, K)
    n_cand = min(P, K + 9)
    tree = cKDTree(X)
    kd_dist, cand = tree.query(X, k=n_cand)
    rows = np.arange(P)
    nbrs, d2 = _sorted_neighbors(X, rows, cand, K)
    if n_cand == P:
        return nbrs
    radius = kd_dist[:, -1]
    kth = np.sqrt(d2[:, K - 1])
    unsafe = ~(kth * (1 + 1e-9) + 1e-300 < radius)
    if np.any(unsafe):
        bad = rows[unsafe]
        cand_all = np.broadcast_to(rows, (len(bad), P))
        for start in range(0, len(bad), 256):
            r = bad[start:start + 256]
            nbrs[r], _ = _sorted_neighbors(X, r, cand_all[start:start + 256], K)
    return nbrs
