"""Indexed triangle mesh with per-face instance and object ids."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    instance_ids: np.ndarray = None
    object_ids: np.ndarray = None
    normals: np.ndarray | None = None
    uv: np.ndarray | None = None
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        for name in ("instance_ids", "object_ids"):
            ids = getattr(self, name)
            ids = np.zeros(len(f), np.int32) if ids is None else np.asarray(ids, dtype=np.int32).reshape(-1)
            if np.ndim(ids) == 0 or len(ids) != len(f):
                ids = np.broadcast_to(ids, (len(f),)).astype(np.int32)
            object.__setattr__(self, name, ids)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_face_counts(self) -> tuple[np.ndarray, np.ndarray]:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces)
        return int(len(used) - len(self.edges()) + len(self.faces))

    def is_manifold(self) -> bool:
        """Every edge borders at most two faces."""
        if self.is_empty():
            return True
        _, counts = self.edge_face_counts()
        return bool(counts.max() <= 2)

    def is_watertight(self) -> bool:
        """Every edge borders exactly two faces, consistently oriented."""
        if self.is_empty():
            return False
        _, counts = self.edge_face_counts()
        if not np.all(counts == 2):
            return False
        directed = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return len(np.unique(directed, axis=0)) == len(directed)

    def boundary_edges(self) -> np.ndarray:
        e, counts = self.edge_face_counts()
        return e[counts == 1]

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        if normalize:
            n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def vertex_normals(self) -> np.ndarray:
        n = np.zeros_like(self.vertices)
        fn = self.face_normals(normalize=False)
        for k in range(3):
            np.add.at(n, self.faces[:, k], fn)
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    def signed_volume(self) -> float:
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def transformed(self, rotation: np.ndarray, translation) -> "Mesh":
        r = np.asarray(rotation, dtype=np.float64)
        v = self.vertices @ r.T + np.asarray(translation, dtype=np.float64)
        normals = None if self.normals is None else self.normals @ r.T
        return replace(self, vertices=v, normals=normals)

    def with_ids(self, instance_id: int | None = None, object_id: int | None = None) -> "Mesh":
        inst = self.instance_ids if instance_id is None else np.full(self.n_faces, instance_id, np.int32)
        obj = self.object_ids if object_id is None else np.full(self.n_faces, object_id, np.int32)
        return replace(self, instance_ids=inst, object_ids=obj)

    def compact(self) -> "Mesh":
        """Drop unreferenced vertices, preserving order of the rest."""
        used = np.unique(self.faces)
        remap = np.full(len(self.vertices), -1, np.int64)
        remap[used] = np.arange(len(used))
        return replace(
            self,
            vertices=self.vertices[used],
            faces=remap[self.faces],
            normals=None if self.normals is None else self.normals[used],
            uv=None if self.uv is None else self.uv[used],
        )


def merge(meshes) -> Mesh:
    """Concatenate meshes in order; per-vertex extras kept only if all have them."""
    meshes = [m for m in meshes if m is not None]
    if not meshes:
        return Mesh.empty()
    offsets = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
    verts = np.concatenate([m.vertices for m in meshes])
    faces = np.concatenate([m.faces + o for m, o in zip(meshes, offsets)])
    inst = np.concatenate([m.instance_ids for m in meshes])
    obj = np.concatenate([m.object_ids for m in meshes])
    normals = None
    if all(m.normals is not None for m in meshes):
        normals = np.concatenate([m.normals for m in meshes])
    return Mesh(verts, faces, inst, obj, normals)


def weld(mesh: Mesh, tol: float) -> Mesh:
    """Merge vertices closer than ``tol`` (grid-snapped), dropping collapsed faces."""
    if mesh.n_vertices == 0:
        return mesh
    from scipy.spatial import cKDTree

    tree = cKDTree(mesh.vertices)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(mesh.n_vertices)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(mesh.n_vertices)])
    faces = roots[mesh.faces]
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    out = Mesh(mesh.vertices, faces[ok], mesh.instance_ids[ok], mesh.object_ids[ok])
    return out.compact()
