"""Navigation geometry: rigid transforms, ICP, mesh intersection, breach points.

All coordinates are in millimetres. Transforms map points from a source
frame into a target frame (``camera <- ct`` for the CT-to-camera transform).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    pass


class FrameId(str, enum.Enum):
    DRILL = "drill"
    DRILL_SLEEVE = "drill_sleeve"
    CT = "ct"
    DRILL_TIP = "drill_tip"
    SLEEVE_TIP = "sleeve_tip"
    CAMERA = "camera"


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise GeometryError("rotation must be orthonormal with determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """R p + t for a single point or an (n, 3) array."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        # (self @ other).apply(p) == self.apply(other.apply(p))
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def to_json(self) -> str:
        return json.dumps({"rotation": self.rotation.ravel().tolist(),
                           "translation": self.translation.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "RigidTransform":
        obj = json.loads(text)
        return cls(np.array(obj["rotation"]).reshape(3, 3), obj["translation"])


def apply(tf: RigidTransform, p) -> np.ndarray:
    return tf.apply(p)


def save_transform(tf: RigidTransform, path) -> None:
    Path(path).write_text(tf.to_json() + "\n")


def load_transform(path) -> RigidTransform:
    return RigidTransform.from_json(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise GeometryError("face index out of range")
        if f.size:
            tri = v[f]
            area2 = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
            if np.any(area2 <= 1e-12):
                raise GeometryError("mesh contains degenerate (zero-area) faces")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def transformed(self, tf: RigidTransform) -> "TriMesh":
        return TriMesh(tf.apply(self.vertices), self.faces)

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]


def save_ply(mesh: TriMesh, path) -> None:
    lines = ["ply", "format ascii 1.0",
             f"element vertex {len(mesh.vertices)}",
             "property double x", "property double y", "property double z",
             f"element face {len(mesh.faces)}",
             "property list uchar int vertex_indices", "end_header"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_ply(path) -> TriMesh:
    """Read an ASCII PLY with x/y/z vertices and triangular faces."""
    path = Path(path)
    if not path.exists():
        raise GeometryError(f"missing mesh file: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise GeometryError(f"{path}: not a PLY file")
    n_vert = n_face = 0
    body = None
    for i, line in enumerate(lines):
        tok = line.split()
        if tok[:1] == ["format"] and tok[1] != "ascii":
            raise GeometryError(f"{path}: only ASCII PLY is supported")
        if tok[:2] == ["element", "vertex"]:
            n_vert = int(tok[2])
        elif tok[:2] == ["element", "face"]:
            n_face = int(tok[2])
        elif tok[:1] == ["end_header"]:
            body = i + 1
            break
    if body is None:
        raise GeometryError(f"{path}: missing end_header")
    verts = np.array([line.split()[:3] for line in lines[body:body + n_vert]], dtype=np.float64)
    faces = []
    for line in lines[body + n_vert:body + n_vert + n_face]:
        tok = line.split()
        if tok[0] != "3":
            raise GeometryError(f"{path}: only triangular faces are supported")
        faces.append([int(t) for t in tok[1:4]])
    return TriMesh(verts.reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


@dataclass(frozen=True, eq=False)
class TrackedTrajectory:
    timestamps_ms: np.ndarray
    tip_positions: np.ndarray

    def __post_init__(self):
        t = np.array(self.timestamps_ms, dtype=np.float64).reshape(-1)
        p = np.array(self.tip_positions, dtype=np.float64).reshape(-1, 3)
        if len(t) != len(p):
            raise GeometryError("timestamps and positions differ in length")
        if np.any(np.diff(t) <= 0):
            raise GeometryError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(p)):
            raise GeometryError("non-finite tip positions")
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "timestamps_ms", t)
        object.__setattr__(self, "tip_positions", p)

    def __len__(self):
        return len(self.timestamps_ms)

    def transformed(self, tf: RigidTransform) -> "TrackedTrajectory":
        return TrackedTrajectory(self.timestamps_ms, tf.apply(self.tip_positions))


def tip_positions_from_marker(marker_poses, t_marker_tip: RigidTransform) -> np.ndarray:
    """Tool-tip positions in camera space from per-sample marker poses.

    ``marker_poses`` are camera <- marker transforms; ``t_marker_tip`` is the
    calibrated marker <- tip transform (for example the drill's tip offset).
    """
    return np.array([(pose @ t_marker_tip).translation for pose in marker_poses])


def save_trajectory(traj: TrackedTrajectory, path) -> None:
    data = np.column_stack([traj.timestamps_ms, traj.tip_positions])
    np.savetxt(path, data, delimiter=",", header="t_ms,x,y,z", comments="", fmt="%.17g")


def load_trajectory(path) -> TrackedTrajectory:
    path = Path(path)
    if not path.exists():
        raise GeometryError(f"missing trajectory file: {path}")
    with open(path) as fh:
        header = fh.readline().strip()
    if header.replace(" ", "") != "t_ms,x,y,z":
        raise GeometryError(f"{path}: expected header 't_ms,x,y,z', got {header!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TrackedTrajectory(data[:, 0], data[:, 1:4])


# ---------------------------------------------------------------- registration

def best_fit_transform(source, target) -> RigidTransform:
    """Least-squares rigid alignment of paired points (Kabsch with reflection fix)."""
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    src_c = src.mean(axis=0)
    tgt_c = tgt.mean(axis=0)
    h = (src - src_c).T @ (tgt - tgt_c)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, tgt_c - rot @ src_c)


def _check_nondegenerate(points: np.ndarray) -> None:
    if len(points) < 3:
        raise GeometryError("ICP needs at least three source points")
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if s[0] == 0 or s[1] <= 1e-9 * s[0]:
        raise GeometryError("source points are collinear or coincident")


def icp_register(source, target, max_iters: int = 100, tol: float = 1e-12,
                 init: RigidTransform | None = None, history: list | None = None) -> RigidTransform:
    """Point-to-point ICP from ``source`` onto ``target`` (points or a TriMesh).

    Correspondences are nearest target vertices. Stops when the MSE
    improvement falls below ``tol`` or after ``max_iters`` iterations. When
    ``init`` is omitted the centroids are aligned first. Per-iteration MSE
    values are appended to ``history`` if given.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    tgt = target.vertices if isinstance(target, TriMesh) else np.asarray(target, dtype=np.float64)
    tgt = tgt.reshape(-1, 3)
    if len(tgt) == 0:
        raise GeometryError("empty ICP target")
    _check_nondegenerate(src)
    tree = cKDTree(tgt)
    if init is None:
        init = RigidTransform(np.eye(3), tgt.mean(axis=0) - src.mean(axis=0))
    tf = init
    prev = np.inf
    for _ in range(max_iters):
        dist, idx = tree.query(tf.apply(src))
        mse = float(np.mean(dist**2))
        if history is not None:
            history.append(mse)
        if prev - mse < tol:
            break
        prev = mse
        tf = best_fit_transform(src, tgt[idx])
    return tf


def rotation_angle_deg(a: RigidTransform, b: RigidTransform) -> float:
    """Angle of the relative rotation between two transforms."""
    rel = a.rotation.T @ b.rotation
    c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


# ---------------------------------------------------------------- intersection

def line_triangle_hits(triangles, origin, direction, eps: float = 1e-12) -> np.ndarray:
    """Line parameters of every triangle the infinite line passes through.

    Vectorised Moller-Trumbore; triangle edges count as hits, so a line
    through a shared edge is reported once per adjacent triangle.
    """
    tri = np.asarray(triangles, dtype=np.float64)
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > eps
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    s = o - tri[:, 0]
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = (q @ d) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    tol = 1e-12
    hit = ok & (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol)
    return t[hit]


def _unique_sorted(values: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    values = np.sort(values)
    if values.size == 0:
        return values
    keep = np.concatenate([[True], np.diff(values) > tol * (1 + np.abs(values[1:]))])
    return values[keep]


def pin_mesh_intersection(mesh: TriMesh, line_point, line_dir):
    """Entry and exit points of a straight pin through the mesh.

    Returns ``(entry, exit)`` ordered along ``line_dir``. For non-convex
    meshes with more than two crossings the outermost pair is returned.
    """
    d = np.asarray(line_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    o = np.asarray(line_point, dtype=np.float64)
    ts = _unique_sorted(line_triangle_hits(mesh.triangles, o, d))
    if ts.size == 0:
        raise GeometryError("line does not intersect the mesh")
    if ts.size == 1:
        raise GeometryError("line only touches the mesh at a single (tangent) point")
    return o + ts[0] * d, o + ts[-1] * d


# ---------------------------------------------------------------- breach labeling

def find_entry_exit(traj: TrackedTrajectory, ep_ct, sp_ct, t_ct_cam: RigidTransform):
    """Indices of the tracked samples closest to the entry and exit points.

    Ties resolve to the earliest sample.
    """
    if len(traj) == 0:
        raise GeometryError("empty trajectory")
    ep = t_ct_cam.apply(ep_ct)
    sp = t_ct_cam.apply(sp_ct)
    d_ep = np.linalg.norm(traj.tip_positions - ep, axis=1)
    d_sp = np.linalg.norm(traj.tip_positions - sp, axis=1)
    return int(np.argmin(d_ep)), int(np.argmin(d_sp))


def _axis(traj: TrackedTrajectory, index_ep: int, index_sp: int):
    if not 0 <= index_ep < index_sp < len(traj):
        raise GeometryError(f"need 0 <= index_EP < index_SP < {len(traj)}, got {index_ep}, {index_sp}")
    ep = traj.tip_positions[index_ep]
    axis = traj.tip_positions[index_sp] - ep
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise GeometryError("entry and exit points coincide")
    return ep, axis / norm


def project_to_axis(traj: TrackedTrajectory, index_ep: int, index_sp: int) -> np.ndarray:
    """Depth (mm) of samples ``index_ep..index_sp`` along the entry->exit axis."""
    ep, unit = _axis(traj, index_ep, index_sp)
    return (traj.tip_positions[index_ep:index_sp + 1] - ep) @ unit


def map_to_axis(traj: TrackedTrajectory, index_ep: int, index_sp: int) -> np.ndarray:
    """Samples of the entry..exit window snapped onto the entry->exit line."""
    ep, unit = _axis(traj, index_ep, index_sp)
    depths = (traj.tip_positions[index_ep:index_sp + 1] - ep) @ unit
    return ep + depths[:, None] * unit


@dataclass(frozen=True, eq=False)
class DrillPath:
    """Entry, exit and breach of one drilled trajectory in CT and camera frames."""
    entry_ct: np.ndarray
    exit_ct: np.ndarray
    entry_cam: np.ndarray
    exit_cam: np.ndarray
    breach_point: np.ndarray
    breach_time_ms: float

    def __post_init__(self):
        if np.allclose(self.entry_ct, self.exit_ct):
            raise GeometryError("entry and exit points coincide")


@dataclass(frozen=True)
class BreachEstimate:
    point: np.ndarray
    time_ms: float
    index: int
    distance: float


def point_triangle_distance(points, triangles) -> np.ndarray:
    """Distance from each point to the nearest triangle, shape ``(n_points,)``."""
    p = np.asarray(points, dtype=np.float64)[:, None, :]
    tri = np.asarray(triangles, dtype=np.float64)[None]
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i", ab, ap)
    d2 = np.einsum("...i,...i", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i", ab, bp)
    d4 = np.einsum("...i,...i", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i", ab, cp)
    d6 = np.einsum("...i,...i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        closest = a + ab * v[..., None] + ac * w[..., None]
        # Voronoi regions of vertices and edges, checked in reverse priority
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        closest = np.where(((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))[..., None],
                           b + (c - b) * t_bc[..., None], closest)
        t_ac = d2 / (d2 - d6)
        closest = np.where(((vb <= 0) & (d2 >= 0) & (d6 <= 0))[..., None],
                           a + ac * t_ac[..., None], closest)
        t_ab = d1 / (d1 - d3)
        closest = np.where(((vc <= 0) & (d1 >= 0) & (d3 <= 0))[..., None],
                           a + ab * t_ab[..., None], closest)
        closest = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, closest)
        closest = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, closest)
        closest = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, closest)
    return np.linalg.norm(p - closest, axis=-1).min(axis=1)


def _nearest_distances(points, mesh: TriMesh, mode: str) -> np.ndarray:
    if mode == "vertex":
        if len(mesh.vertices) == 0:
            raise GeometryError("mesh has no vertices")
        return cKDTree(mesh.vertices).query(points)[0]
    if mode == "surface":
        if len(mesh.faces) == 0:
            raise GeometryError("mesh has no faces")
        chunk = max(1, 2_000_000 // len(mesh.faces))
        return np.concatenate([point_triangle_distance(points[i:i + chunk], mesh.triangles)
                               for i in range(0, len(points), chunk)])
    raise GeometryError(f"unknown distance mode {mode!r}")


def find_breach(traj: TrackedTrajectory, mesh: TriMesh, t_ct_cam: RigidTransform,
                index_ep: int, index_sp: int, mode: str = "vertex") -> BreachEstimate:
    """Axis-mapped sample closest to the mesh, searched between entry and exit.

    ``mode="vertex"`` measures distance to mesh vertices; ``"surface"`` uses
    point-to-triangle distance instead. Ties go to the earliest sample.
    """
    mapped = map_to_axis(traj, index_ep, index_sp)
    dist = _nearest_distances(mapped, mesh.transformed(t_ct_cam), mode)
    k = int(np.argmin(dist))
    return BreachEstimate(mapped[k], float(traj.timestamps_ms[index_ep + k]),
                          index_ep + k, float(dist[k]))


def distance_curves(traj: TrackedTrajectory, mesh: TriMesh, t_ct_cam: RigidTransform, ep_cam):
    """Per-sample distance from the tip to the entry point and to the nearest mesh vertex."""
    if len(traj) == 0:
        raise GeometryError("empty trajectory")
    d_ep = np.linalg.norm(traj.tip_positions - np.asarray(ep_cam, dtype=np.float64), axis=1)
    d_mesh = _nearest_distances(traj.tip_positions, mesh.transformed(t_ct_cam), "vertex")
    return d_ep, d_mesh
