"""Crack-conforming P1 meshes with duplicated nodes along the crack.

The crack polyline is meshed as a chain of constrained segments.  Every
crack node except the far end is split into a plus copy (left of the crack
direction) and a minus copy.  Copies behind the tip are *released* and act
as independent nodes; copies at or ahead of the tip are *tied*, sharing the
degrees of freedom of their plus twin, so the mesh is continuous there and
the crack can be opened later by releasing ties without changing
connectivity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import triangle
from scipy.spatial import cKDTree

from .domain import DomainSpec
from .fem import Assembly, prolongation
from .geometry import CrackPath, MeshMotion

log = logging.getLogger(__name__)

__all__ = ["DomainSpec", "CrackedMesh", "MeshInversionError", "build_cracked_mesh", "grow_mesh",
           "transfer_state", "transfer_fields", "check_mesh", "uncracked_mesh"]


class MeshInversionError(RuntimeError):
    """Moved triangles degenerate or distort beyond the motion tolerance."""


@dataclass(frozen=True, eq=False)
class CrackedMesh:
    nodes: np.ndarray
    tris: np.ndarray
    crack_nodes: np.ndarray      # plus copies, ordered from the mouth
    crack_twins: np.ndarray      # minus copies (-1 for the undivided end node)
    crack_arcs: np.ndarray
    tip_index: int               # position of the tip in the crack arrays (-1: no crack)
    released: np.ndarray         # per crack node: copies act independently
    dirichlet: np.ndarray        # node indices on Dirichlet edges
    h: float
    crack_h: float
    domain: DomainSpec
    path: CrackPath | None = None
    cache: dict = field(default_factory=dict, repr=False)

    def __getstate__(self):
        # solver caches hold sparse factorizations, which do not pickle
        state = self.__dict__.copy()
        state["cache"] = {}
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def ndof(self) -> int:
        return 2 * len(self.nodes)

    @property
    def tip_arc(self) -> float | None:
        return None if self.tip_index < 0 else float(self.crack_arcs[self.tip_index])

    @property
    def tip_node(self) -> int | None:
        return None if self.tip_index < 0 else int(self.crack_nodes[self.tip_index])

    @cached_property
    def assembly(self) -> Assembly:
        return Assembly(self.nodes, self.tris)

    @cached_property
    def _ties(self):
        owner = np.arange(self.n_nodes)
        tied = (self.crack_twins >= 0) & ~self.released
        owner[self.crack_twins[tied]] = self.crack_nodes[tied]
        reps, node_to_active = np.unique(owner, return_inverse=True)
        return node_to_active, reps

    @property
    def node_to_active(self) -> np.ndarray:
        return self._ties[0]

    @property
    def active_nodes(self) -> np.ndarray:
        """One representative node per active (independent) node."""
        return self._ties[1]

    @property
    def n_active(self) -> int:
        return len(self._ties[1])

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        return prolongation(self.n_nodes, self.node_to_active, self.n_active)

    @cached_property
    def active_dofs(self) -> np.ndarray:
        reps = self.active_nodes
        out = np.empty(2 * len(reps), dtype=np.int64)
        out[0::2], out[1::2] = 2 * reps, 2 * reps + 1
        return out

    @cached_property
    def dirichlet_active_dofs(self) -> np.ndarray:
        act = self.node_to_active[self.dirichlet]
        out = np.empty(2 * len(act), dtype=np.int64)
        out[0::2], out[1::2] = 2 * act, 2 * act + 1
        return np.unique(out)

    @cached_property
    def free_active_dofs(self) -> np.ndarray:
        mask = np.ones(2 * self.n_active, dtype=bool)
        mask[self.dirichlet_active_dofs] = False
        return np.nonzero(mask)[0]

    def restrict(self, full: np.ndarray) -> np.ndarray:
        """Active vector from a full nodal vector (values of the representatives)."""
        return np.asarray(full).reshape(-1)[self.active_dofs]

    def extend(self, active: np.ndarray) -> np.ndarray:
        return active[2 * self.node_to_active[:, None] + np.arange(2)].reshape(-1)

    @property
    def n_duplicated(self) -> int:
        return int(np.count_nonzero(self.crack_twins >= 0))

    @cached_property
    def centroid_tree(self) -> cKDTree:
        return cKDTree(self.assembly.centroids)

    def with_geometry(self, nodes: np.ndarray, tip_index: int, released: np.ndarray) -> "CrackedMesh":
        return replace(self, nodes=nodes, tip_index=tip_index, released=released, cache={})


def _subdivide_boundary(domain: DomainSpec, h: float, mouth: np.ndarray | None):
    """Boundary points at spacing ``<= h`` (mouth inserted), segments and labels."""
    pts, labels, mouth_index = [], [], None
    for a, b, lab in domain.edges:
        length = float(np.linalg.norm(b - a))
        n = max(1, math.ceil(length / h - 1e-9))
        ts = list(np.linspace(0.0, 1.0, n + 1)[:-1])
        insert = None
        if mouth is not None and mouth_index is None:
            ab = b - a
            t = float((mouth - a) @ ab / (ab @ ab))
            if -1e-12 <= t < 1 - 1e-12 and np.linalg.norm(a + t * ab - mouth) <= 1e-9 * max(1, length):
                insert = min(max(t, 0.0), 1.0)
        if insert is not None:
            near = [i for i, t in enumerate(ts) if abs(t - insert) * length < 0.25 * h]
            if near:
                # replace the closest subdivision point by the mouth, keep neighbours
                i = min(near, key=lambda j: abs(ts[j] - insert))
                ts[i] = insert
            else:
                ts.append(insert)
                ts.sort()
        for t in ts:
            if insert is not None and t == insert:
                mouth_index = len(pts)
                pts.append(mouth.copy())
            else:
                pts.append(a + t * (b - a))
            labels.append(lab)
    n = len(pts)
    segs = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    return np.array(pts), segs, labels, mouth_index


def _crack_arcs(a0: float, s: float, s_max: float | None, crack_h: float) -> np.ndarray:
    n1 = max(1, math.ceil((s - a0) / crack_h - 1e-9))
    arcs = np.linspace(a0, s, n1 + 1)
    if s_max is not None and s_max > s + 1e-12:
        n2 = max(1, math.ceil((s_max - s) / crack_h - 1e-9))
        arcs = np.concatenate([arcs, np.linspace(s, s_max, n2 + 1)[1:]])
    return arcs


def _triangulate(points: np.ndarray, segments: np.ndarray, h: float, min_angle: float,
                 area_factor: float) -> tuple[np.ndarray, np.ndarray]:
    area = area_factor * h * h
    opts = f"pq{min_angle:g}a{area:.12g}YYQ"
    out = triangle.triangulate({"vertices": points, "segments": segments}, opts)
    nodes = np.asarray(out["vertices"], dtype=float)
    tris = np.asarray(out["triangles"], dtype=np.int64)
    if len(nodes) < len(points) or not np.allclose(nodes[:len(points)], points, atol=0, rtol=0):
        raise RuntimeError("triangulator did not preserve the input vertices")
    return nodes, _orient(nodes, tris)


def _orient(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    tris = tris.copy()
    neg = area2 < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def uncracked_mesh(domain: DomainSpec, h: float, min_angle: float = 28.0,
                   area_factor: float = 0.4) -> CrackedMesh:
    pts, segs, _, _ = _subdivide_boundary(domain, h, None)
    nodes, tris = _triangulate(pts, segs, h, min_angle, area_factor)
    empty_i = np.zeros(0, dtype=np.int64)
    dirichlet = np.nonzero(domain.on_labelled_edges(nodes, "D", 1e-9 * max(1.0, h)))[0]
    return CrackedMesh(nodes, tris, empty_i, empty_i, np.zeros(0), -1, np.zeros(0, dtype=bool),
                       dirichlet, h, h, domain, None)


def build_cracked_mesh(domain: DomainSpec, path: CrackPath, s: float, h: float,
                       s_max: float | None = None, crack_h: float | None = None,
                       min_angle: float = 28.0, area_factor: float = 0.4) -> CrackedMesh:
    """Triangulate the domain minus the crack ``gamma([a0, s])``.

    With ``s_max > s`` the polyline continues to ``s_max`` with tied
    duplicated nodes so the same mesh serves a growing crack.
    """
    a0 = path.a0
    if not (a0 - 1e-12 <= s <= path.b + 1e-12):
        raise ValueError(f"crack length {s} outside [{a0}, {path.b}]")
    if s_max is not None and not (s - 1e-12 <= s_max <= path.b + 1e-12):
        raise ValueError(f"s_max {s_max} outside [{s}, {path.b}]")
    crack_h = 0.5 * h if crack_h is None else crack_h
    if s <= a0 + 1e-12 and (s_max is None or s_max <= a0 + 1e-12):
        mesh = uncracked_mesh(domain, h, min_angle, area_factor)
        return replace(mesh, path=path, crack_h=crack_h)

    arcs = _crack_arcs(a0, s, s_max, crack_h)
    cpts = path.point(arcs)
    mouth = np.asarray(path.points[0], dtype=float)
    cpts[0] = mouth
    bpts, bsegs, _, mouth_index = _subdivide_boundary(domain, h, mouth)
    if mouth_index is None:
        raise ValueError("crack mouth is not on the domain boundary")
    nb = len(bpts)
    crack_idx = np.concatenate([[mouth_index], nb + np.arange(len(arcs) - 1)])
    pts = np.vstack([bpts, cpts[1:]])
    csegs = np.column_stack([crack_idx[:-1], crack_idx[1:]])
    nodes, tris = _triangulate(pts, np.vstack([bsegs, csegs]), h, min_angle, area_factor)

    # split every crack node except the far end into plus/minus copies
    node_list = [nodes]
    centroids = nodes[tris].mean(axis=1)
    tris = tris.copy()
    twins = np.full(len(arcs), -1, dtype=np.int64)
    inc_order = np.argsort(tris.ravel(), kind="stable")
    inc_sorted = tris.ravel()[inc_order]
    next_index = len(nodes)
    for j in range(len(arcs) - 1):
        node = crack_idx[j]
        p = nodes[node]
        nxt = nodes[crack_idx[j + 1]]
        prv = nodes[crack_idx[j - 1]] if j > 0 else p - (nxt - p)
        a_next = math.atan2(nxt[1] - p[1], nxt[0] - p[0])
        a_prev = math.atan2(prv[1] - p[1], prv[0] - p[0])
        span = (a_prev - a_next) % (2 * math.pi)
        lo, hi = np.searchsorted(inc_sorted, [node, node + 1])
        elems = inc_order[lo:hi] // 3
        cen = centroids[elems]
        ang = np.arctan2(cen[:, 1] - p[1], cen[:, 0] - p[0])
        plus = ((ang - a_next) % (2 * math.pi)) < span
        minus_elems = elems[~plus]
        if len(minus_elems) == 0 or np.all(~plus):
            raise RuntimeError(f"crack node at arc {arcs[j]:.6g} has triangles on one side only")
        tri_block = tris[minus_elems]
        tri_block[tri_block == node] = next_index
        tris[minus_elems] = tri_block
        node_list.append(p[None, :])
        twins[j] = next_index
        next_index += 1
    nodes = np.vstack(node_list)

    released = np.zeros(len(arcs), dtype=bool)
    released[:-1] = arcs[:-1] < s - 1e-12
    tip_index = int(np.argmin(np.abs(arcs - s)))
    dirichlet = np.nonzero(domain.on_labelled_edges(nodes, "D", 1e-9 * max(1.0, h)))[0]
    return CrackedMesh(nodes, tris, crack_idx.astype(np.int64), twins, arcs, tip_index, released,
                       dirichlet, h, crack_h, domain, path)


def grow_mesh(mesh: CrackedMesh, motion: MeshMotion, t: float,
              max_distortion: float | None = None) -> CrackedMesh:
    """Move nodes by the tip motion and open the crack behind the new tip.

    The motion's anchor must be a crack node; it becomes the tip, placed at
    ``gamma(s(t))``.  Crack nodes before it are released.
    """
    if mesh.tip_index < 0:
        raise ValueError("mesh has no crack to grow")
    k = np.nonzero(np.abs(mesh.crack_arcs - motion.anchor) <= 1e-9 * max(1.0, mesh.h))[0]
    if len(k) == 0:
        raise ValueError(f"motion anchor {motion.anchor:.6g} is not a crack node of the mesh")
    k = int(k[0])
    released = np.zeros_like(mesh.released)
    released[:k] = True
    if np.any(mesh.crack_twins[:k] < 0):
        raise ValueError("cannot release the undivided end node")
    nodes = motion.forward(t, mesh.nodes)
    out = mesh.with_geometry(nodes, k, released)
    eps = motion.epsilon if max_distortion is None else max_distortion
    ratio = out.assembly.area / mesh.assembly.area
    if np.min(out.assembly.area) <= 1e-12 * mesh.h**2 or np.min(ratio) < 1 - eps \
            or np.max(ratio) > 1 + eps:
        raise MeshInversionError(f"moved element area ratios in [{ratio.min():.3f}, {ratio.max():.3f}]")
    return out


# ---------------------------------------------------------------------------
# Field transfer


def _locate(mesh: CrackedMesh, probes: np.ndarray, k: int = 16):
    """Element containing each probe (nearest by barycentric slack when none does)."""
    asm = mesh.assembly
    p = mesh.nodes[mesh.tris]
    k = min(k, len(mesh.tris))
    _, cand = mesh.centroid_tree.query(probes, k)
    cand = cand.reshape(len(probes), k)
    p0 = p[cand, 0]
    e1 = p[cand, 1] - p0
    e2 = p[cand, 2] - p0
    det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    q = probes[:, None, :] - p0
    l1 = (q[..., 0] * e2[..., 1] - q[..., 1] * e2[..., 0]) / det
    l2 = (e1[..., 0] * q[..., 1] - e1[..., 1] * q[..., 0]) / det
    slack = np.minimum(np.minimum(l1, l2), 1.0 - l1 - l2)
    best = np.argmax(slack, axis=1)
    elem = cand[np.arange(len(probes)), best]
    worst = slack[np.arange(len(probes)), best]
    outside = worst < -1e-9
    if np.any(outside):
        log.info("transfer: %d probe(s) outside the old mesh, nearest element used",
                 int(np.count_nonzero(outside)))
    del asm
    return elem


def _barycentric(mesh: CrackedMesh, elem: np.ndarray, x: np.ndarray) -> np.ndarray:
    p = mesh.nodes[mesh.tris[elem]]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    q = x - p[:, 0]
    l1 = (q[:, 0] * e2[:, 1] - q[:, 1] * e2[:, 0]) / det
    l2 = (e1[:, 0] * q[:, 1] - e1[:, 1] * q[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def _node_probes(mesh: CrackedMesh, pull: float = 0.1) -> np.ndarray:
    """Points slightly inside the star of each node, on the node's side of the crack."""
    cen = mesh.assembly.centroids
    acc = np.zeros_like(mesh.nodes)
    cnt = np.zeros(mesh.n_nodes)
    for c in range(3):
        np.add.at(acc, mesh.tris[:, c], cen)
        np.add.at(cnt, mesh.tris[:, c], 1.0)
    mean = acc / np.maximum(cnt, 1.0)[:, None]
    return mesh.nodes + pull * (mean - mesh.nodes)


def same_mesh(a: CrackedMesh, b: CrackedMesh) -> bool:
    return a is b or (a.nodes.shape == b.nodes.shape and a.tris.shape == b.tris.shape
                      and np.array_equal(a.nodes, b.nodes) and np.array_equal(a.tris, b.tris)
                      and np.array_equal(a.released, b.released))


def transfer_fields(old: CrackedMesh, new: CrackedMesh, nodal=(), elemental=()):
    """Interpolate nodal vectors (length ``2 n``) and per-element arrays onto ``new``."""
    if same_mesh(old, new):
        return [None if f is None else np.array(f, copy=True) for f in nodal], \
               [None if f is None else np.array(f, copy=True) for f in elemental]
    nodal_out = []
    if any(f is not None for f in nodal):
        elem = _locate(old, _node_probes(new))
        bary = _barycentric(old, elem, new.nodes)
        verts = old.tris[elem]
        for f in nodal:
            if f is None:
                nodal_out.append(None)
                continue
            vals = np.asarray(f).reshape(-1, 2)[verts]
            nodal_out.append(np.einsum("nk,nkc->nc", bary, vals).reshape(-1))
    else:
        nodal_out = [None for _ in nodal]
    elem_out = []
    if any(f is not None for f in elemental):
        elem = _locate(old, new.assembly.centroids)
        for f in elemental:
            elem_out.append(None if f is None else np.asarray(f)[elem].copy())
    else:
        elem_out = [None for _ in elemental]
    # tied copies must carry identical values
    nodal_out = [None if f is None else new.extend(new.restrict(f)) for f in nodal_out]
    return nodal_out, elem_out


def transfer_state(old_mesh: CrackedMesh, new_mesh: CrackedMesh, state):
    """Solver state with ``u, v, a`` interpolated and memory fields copied per element."""
    (u, v, a), (z, carry) = transfer_fields(old_mesh, new_mesh, (state.u, state.v, state.a),
                                            (state.z, state.carry))
    return replace(state, u=u, v=v, a=a, z=z, carry=carry, mesh=new_mesh)


# ---------------------------------------------------------------------------
# Audits


def triangle_angles(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    out = np.empty((len(tris), 3))
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        cosv = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out[:, i] = np.degrees(np.arccos(np.clip(cosv, -1, 1)))
    return out


def check_mesh(mesh: CrackedMesh) -> dict[str, bool]:
    """Structural invariants of a cracked mesh."""
    area = mesh.assembly.area
    res = {"positive_area": bool(np.all(area > 1e-12 * mesh.h**2))}
    interior = mesh.crack_twins[:-1] if len(mesh.crack_twins) else mesh.crack_twins
    res["interior_duplicated"] = bool(np.all(interior >= 0))
    if len(mesh.crack_twins):
        res["end_single"] = bool(mesh.crack_twins[-1] < 0)
    pairs = [(p, m) for p, m in zip(mesh.crack_nodes, mesh.crack_twins) if m >= 0]
    ok = True
    for p, m in pairs:
        both = np.any(mesh.tris == p, axis=1) & np.any(mesh.tris == m, axis=1)
        ok &= not np.any(both)
    res["sides_separated"] = bool(ok)
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[mesh.tris.ravel()] = True
    res["all_nodes_used"] = bool(np.all(used))
    return res
