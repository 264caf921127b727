"""Triangle surface meshes: loading, adjacency, tangent frames, transport.

A mesh is an orientable 2-manifold with or without boundary.  Per-node
tangent frames and per-edge parallel transport angles turn the surface
into the discrete connection used by the cross field solver: a tangent
vector with frame angle ``a`` at node i transports to frame angle
``a + phi(i, j)`` at node j.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import MeshError
from .geometry import rotate_about_axis, unit, wrap_pi


class TriMesh:
    """Indexed triangle surface with adjacency.

    Parameters
    ----------
    nodes : (n, 3) array_like
        Node positions. 2D input is padded with z = 0.
    tris : (m, 3) array_like
        Node index triples. Windings are made consistent on
        construction; inconsistent orientability raises MeshError.

    Notes
    -----
    Construction validates manifoldness (every edge borders one or two
    triangles, single fan per node), rejects degenerate triangles, and
    builds edge tables, one-ring adjacency, areas, tip angles and
    boundary loops.  All arrays are immutable after construction.
    """

    def __init__(self, nodes, tris):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
            raise MeshError("nodes must be (n, 2) or (n, 3)")
        if nodes.shape[1] == 2:
            nodes = np.column_stack([nodes, np.zeros(len(nodes))])
        tris = np.asarray(tris, dtype=np.int64)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("tris must be (m, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= len(nodes)):
            raise MeshError("triangle index out of range")
        self.nodes = nodes
        self.tris = tris
        self._check_degenerate()
        self._orient_consistently()
        self._build_edges()
        self._check_vertex_manifold()
        self._check_connected()
        self._build_geometry()
        self._build_boundary_loops()
        for a in (self.nodes, self.tris, self.edges, self.edge_tris,
                  self.tri_edges, self.tri_areas, self.tip_angles):
            a.setflags(write=False)

    # -- validation and connectivity -----------------------------------

    def _check_degenerate(self):
        p = self.nodes[self.tris]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        area2 = np.linalg.norm(cross, axis=1)
        lmax = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2).max(axis=1)
        bad = np.nonzero(area2 <= 1e-12 * lmax ** 2)[0]
        if len(bad):
            raise MeshError(f"degenerate triangle {bad[0]} (zero area)")

    def _orient_consistently(self):
        m = len(self.tris)
        edge_map = {}
        for t in range(m):
            a, b, c = self.tris[t]
            for (i, j) in ((a, b), (b, c), (c, a)):
                key = (i, j) if i < j else (j, i)
                edge_map.setdefault(key, []).append(t)
        for key, ts in edge_map.items():
            if len(ts) > 2:
                raise MeshError(
                    f"non-manifold edge {key}: {len(ts)} incident triangles")
        # adjacency via shared edges, BFS flipping windings to agree
        neigh = [[] for _ in range(m)]
        for ts in edge_map.values():
            if len(ts) == 2:
                neigh[ts[0]].append(ts[1])
                neigh[ts[1]].append(ts[0])
        flipped = np.zeros(m, dtype=bool)
        seen = np.zeros(m, dtype=bool)
        tris = self.tris.copy()

        def directed_edges(t):
            a, b, c = tris[t]
            return ((a, b), (b, c), (c, a))

        for seed in range(m):
            if seen[seed]:
                continue
            seen[seed] = True
            stack = [seed]
            while stack:
                t = stack.pop()
                t_edges = set(directed_edges(t))
                for s in neigh[t]:
                    shared_agree = any(
                        (j, i) in t_edges for (i, j) in directed_edges(s))
                    shared_conflict = any(
                        (i, j) in t_edges for (i, j) in directed_edges(s))
                    if not seen[s]:
                        if shared_conflict:
                            tris[s] = tris[s][::-1]
                        seen[s] = True
                        stack.append(s)
                    else:
                        if not shared_agree:
                            raise MeshError(
                                f"non-orientable: triangles {t} and {s} "
                                "cannot be wound consistently")
        self.tris = tris

    def _build_edges(self):
        m = len(self.tris)
        i = self.tris
        pairs = np.concatenate([i[:, [0, 1]], i[:, [1, 2]], i[:, [2, 0]]])
        keys = np.sort(pairs, axis=1)
        self.edges, inv = np.unique(keys, axis=0, return_inverse=True)
        self.tri_edges = inv.reshape(3, m).T.copy()
        self.edge_tris = np.full((len(self.edges), 2), -1, dtype=np.int64)
        for t in range(m):
            for k in range(3):
                e = self.tri_edges[t, k]
                if self.edge_tris[e, 0] < 0:
                    self.edge_tris[e, 0] = t
                else:
                    self.edge_tris[e, 1] = t
        self.boundary_edge = self.edge_tris[:, 1] < 0
        self.boundary_node = np.zeros(len(self.nodes), dtype=bool)
        for e in np.nonzero(self.boundary_edge)[0]:
            self.boundary_node[self.edges[e]] = True
        # one-ring neighbours and incident triangles / edges per node
        n = len(self.nodes)
        self.node_neighbors = [[] for _ in range(n)]
        self.node_edges = [[] for _ in range(n)]
        for e, (a, b) in enumerate(self.edges):
            self.node_neighbors[a].append(b)
            self.node_neighbors[b].append(a)
            self.node_edges[a].append(e)
            self.node_edges[b].append(e)
        self.node_tris = [[] for _ in range(n)]
        for t in range(m):
            for v in self.tris[t]:
                self.node_tris[v].append(t)
        orphan = [v for v in range(n) if not self.node_tris[v]]
        if orphan:
            raise MeshError(f"node {orphan[0]} belongs to no triangle")

    def _check_vertex_manifold(self):
        # every node's incident triangles must form a single fan
        for v in range(len(self.nodes)):
            tris_v = self.node_tris[v]
            if len(tris_v) == 1:
                continue
            adj = {t: [] for t in tris_v}
            for e in self.node_edges[v]:
                t0, t1 = self.edge_tris[e]
                if t1 >= 0:
                    adj[t0].append(t1)
                    adj[t1].append(t0)
            seen = {tris_v[0]}
            stack = [tris_v[0]]
            while stack:
                t = stack.pop()
                for s in adj[t]:
                    if s not in seen:
                        seen.add(s)
                        stack.append(s)
            if len(seen) != len(tris_v):
                raise MeshError(f"non-manifold node {v}: split triangle fan")

    def _check_connected(self):
        m = len(self.tris)
        seen = np.zeros(m, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            t = stack.pop()
            for k in range(3):
                e = self.tri_edges[t, k]
                for s in self.edge_tris[e]:
                    if s >= 0 and not seen[s]:
                        seen[s] = True
                        stack.append(s)
        if not seen.all():
            raise MeshError("mesh is not connected")

    # -- geometry -------------------------------------------------------

    def _build_geometry(self):
        p = self.nodes[self.tris]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        nrm = np.linalg.norm(cross, axis=1)
        self.tri_areas = 0.5 * nrm
        self.tri_normals = cross / nrm[:, None]
        # tip angle at local corner k of each triangle
        tips = np.empty((len(self.tris), 3))
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            c = (u * v).sum(1) / (np.linalg.norm(u, axis=1)
                                  * np.linalg.norm(v, axis=1))
            tips[:, k] = np.arccos(np.clip(c, -1.0, 1.0))
        self.tip_angles = tips
        self.edge_lengths = np.linalg.norm(
            self.nodes[self.edges[:, 0]] - self.nodes[self.edges[:, 1]],
            axis=1)
        self.mean_edge_length = float(self.edge_lengths.mean())
        self.ring_area = np.zeros(len(self.nodes))
        for t in range(len(self.tris)):
            for v in self.tris[t]:
                self.ring_area[v] += self.tri_areas[t]

    def _build_boundary_loops(self):
        """Boundary loops as node cycles, oriented with the interior on
        the left (directed as the boundary edges appear in their
        triangle winding)."""
        nxt = {}
        for t in range(len(self.tris)):
            a, b, c = self.tris[t]
            for k, (i, j) in enumerate(((a, b), (b, c), (c, a))):
                e = self.tri_edges[t, k]
                if self.boundary_edge[e]:
                    nxt[i] = j
        loops = []
        visited = set()
        for start in sorted(nxt):
            if start in visited:
                continue
            loop = [start]
            visited.add(start)
            cur = nxt[start]
            while cur != start:
                loop.append(cur)
                visited.add(cur)
                cur = nxt[cur]
            loops.append(loop)
        self.boundary_loops = loops

    # -- queries --------------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_tris(self):
        return len(self.tris)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def euler_characteristic(self):
        return self.n_nodes - self.n_edges + self.n_tris

    @property
    def has_boundary(self):
        return bool(self.boundary_edge.any())

    def edge_id(self, i, j):
        key = (i, j) if i < j else (j, i)
        idx = np.searchsorted(self.edges[:, 0], key[0])
        while idx < len(self.edges) and self.edges[idx, 0] == key[0]:
            if self.edges[idx, 1] == key[1]:
                return idx
            idx += 1
        raise KeyError(f"no edge {i}-{j}")

    def tri_local_index(self, t, v):
        for k in range(3):
            if self.tris[t, k] == v:
                return k
        raise KeyError(f"node {v} not in triangle {t}")

    def other_tri(self, e, t):
        t0, t1 = self.edge_tris[e]
        return t1 if t0 == t else t0

    def node_fan(self, v):
        """Incident triangles of v in rotational order.

        For boundary nodes the fan starts at the outgoing boundary edge
        (the one wound v -> next in its triangle) and ends at the
        incoming one; for interior nodes it is a full cycle starting at
        the lowest-id incident triangle.
        """
        tris_v = self.node_tris[v]
        if self.boundary_node[v]:
            start = None
            for t in tris_v:
                k = self.tri_local_index(t, v)
                e = self.tri_edges[t, k]
                if self.boundary_edge[e]:
                    start = t
                    break
            assert start is not None
        else:
            start = min(tris_v)
        fan = [start]
        cur = start
        while True:
            k = self.tri_local_index(cur, v)
            # edge (v, prev-corner) is the ccw-far edge of this triangle
            e = self.tri_edges[cur, (k + 2) % 3]
            nt = self.other_tri(e, cur)
            if nt < 0 or nt == start:
                break
            fan.append(nt)
            cur = nt
        return fan


# ---------------------------------------------------------------------------
# loading


def load_mesh(path, fmt=None):
    """Load an ASCII OBJ or OFF triangle mesh.

    Only geometry records are read (OBJ ``v``/``f``, OFF header and
    elements); normals in the file are ignored and recomputed.  Node and
    triangle order is preserved from the file.
    """
    if fmt is None:
        ext = os.path.splitext(path)[1].lower()
        fmt = {".obj": "OBJ", ".off": "OFF"}.get(ext)
        if fmt is None:
            raise MeshError(f"cannot infer format of {path!r}; pass fmt=")
    fmt = fmt.upper()
    if fmt == "OBJ":
        return _load_obj(path)
    if fmt == "OFF":
        return _load_off(path)
    raise MeshError(f"unsupported format {fmt!r}")


def _load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{ln}: malformed vertex record")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(
                        f"{path}:{ln}: face with {len(idx)} vertices "
                        "(triangles only)")
                faces.append([i - 1 if i > 0 else len(verts) + i
                              for i in idx])
    if not verts or not faces:
        raise MeshError(f"{path}: no triangles found")
    return TriMesh(verts, faces)


def _load_off(path):
    with open(path) as fh:
        tokens = []
        for line in fh:
            stripped = line.split("#")[0].strip()
            if stripped:
                tokens.extend(stripped.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4  # skip edge count
        verts = []
        for _ in range(nv):
            verts.append([float(x) for x in tokens[pos:pos + 3]])
            pos += 3
        faces = []
        for _ in range(nf):
            cnt = int(tokens[pos])
            if cnt != 3:
                raise MeshError(f"{path}: face with {cnt} vertices "
                                "(triangles only)")
            faces.append([int(x) for x in tokens[pos + 1:pos + 4]])
            pos += 1 + cnt
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed OFF file: {exc}") from None
    return TriMesh(verts, faces)


def write_obj(mesh, path):
    with open(path, "w") as fh:
        for p in mesh.nodes:
            fh.write(f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        for t in mesh.tris:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def write_off(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_nodes} {mesh.n_tris} 0\n")
        for p in mesh.nodes:
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        for t in mesh.tris:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


# ---------------------------------------------------------------------------
# frames and transport


def vertex_normals(mesh):
    """Tip-angle weighted average of incident face normals, normalized."""
    normals = np.zeros((mesh.n_nodes, 3))
    for t in range(mesh.n_tris):
        for k in range(3):
            v = mesh.tris[t, k]
            normals[v] += mesh.tip_angles[t, k] * mesh.tri_normals[t]
    nrm = np.linalg.norm(normals, axis=1)
    bad = np.nonzero(nrm < 1e-12)[0]
    if len(bad):
        raise MeshError(f"node {bad[0]}: zero average normal (fold-over)")
    return normals / nrm[:, None]


@dataclass(frozen=True)
class TangentFrames:
    """Per-node orthonormal tangent bases; basis1 x basis2 = normal."""
    normals: np.ndarray
    basis1: np.ndarray
    basis2: np.ndarray

    def frame_complex(self, v, vec3):
        """Coordinates of a 3-vector in the tangent plane of node v."""
        return complex(np.dot(vec3, self.basis1[v]),
                       np.dot(vec3, self.basis2[v]))


def build_tangent_frames(mesh, normals):
    """Deterministic frame per node.

    basis1 is the normalized tangent-plane projection of the
    lowest-indexed incident edge (next edge if that projection is
    degenerate); basis2 completes a right-handed frame with the normal.
    """
    n = mesh.n_nodes
    basis1 = np.zeros((n, 3))
    basis2 = np.zeros((n, 3))
    for v in range(n):
        nv = normals[v]
        found = False
        for e in sorted(mesh.node_edges[v]):
            a, b = mesh.edges[e]
            other = b if a == v else a
            d = mesh.nodes[other] - mesh.nodes[v]
            proj = d - np.dot(d, nv) * nv
            pl = np.linalg.norm(proj)
            if pl > 1e-8 * np.linalg.norm(d):
                basis1[v] = proj / pl
                found = True
                break
        if not found:
            raise MeshError(f"node {v}: all incident edges parallel to normal")
        basis2[v] = np.cross(nv, basis1[v])
    return TangentFrames(normals=normals, basis1=basis1, basis2=basis2)


@dataclass(frozen=True)
class EdgeTransport:
    """Parallel transport angles phi per canonical edge (a < b).

    A tangent vector with frame angle ``a`` at node i has frame angle
    ``a + phi(i, j)`` at node j; representation vectors transport by
    exp(4i phi).  phi(j, i) = -phi(i, j) exactly.
    """
    phi_canonical: np.ndarray  # aligned with mesh.edges rows (a -> b)


def edge_transport_angles(mesh, frames):
    """Transport angle per edge from both endpoint tangent projections.

    For the canonical direction a -> b of edge (a, b), the stored value
    is beta_b - beta_a where beta_v is the frame angle of the edge
    vector projected into the tangent plane at v.
    """
    E = mesh.n_edges
    phi = np.zeros(E)
    for e in range(E):
        a, b = mesh.edges[e]
        d = mesh.nodes[b] - mesh.nodes[a]
        beta = []
        for v in (a, b):
            x = np.dot(d, frames.basis1[v])
            y = np.dot(d, frames.basis2[v])
            if math.hypot(x, y) < 1e-12 * np.linalg.norm(d):
                raise MeshError(
                    f"edge {a}-{b} projects to zero in tangent plane of {v}")
            beta.append(math.atan2(y, x))
        phi[e] = wrap_pi(beta[1] - beta[0])
    return EdgeTransport(phi_canonical=phi)


def transport_phi(mesh, transport, i, j):
    """phi for the directed edge i -> j."""
    e = mesh.edge_id(i, j)
    p = transport.phi_canonical[e]
    return p if mesh.edges[e, 0] == i else -p


# ---------------------------------------------------------------------------
# boundary classification


@dataclass
class BoundaryNode:
    node: int
    interior_angle: float
    index4: int              # boundary index in quarters: 1, 0, -1, -2
    d_vec: np.ndarray        # alignment direction, unit, in tangent plane
    u: complex               # Dirichlet value d^4 in the node frame


@dataclass
class BoundaryInfo:
    """Boundary classification; `nodes` maps node id -> BoundaryNode."""
    nodes: dict

    @property
    def corner_nodes(self):
        return [v for v, b in self.nodes.items() if b.index4 != 0]

    def index_sum4(self):
        return sum(b.index4 for b in self.nodes.values())


def _table_index4(angle):
    # interior angle -> boundary index in quarter units
    if angle < 3.0 * math.pi / 4.0:
        return 1
    if angle <= 5.0 * math.pi / 4.0:
        return 0
    if angle <= 7.0 * math.pi / 4.0:
        return -1
    return -2


def classify_boundary(mesh, frames):
    """Interior angles, boundary indices and Dirichlet alignment data.

    The interior angle is the intrinsic one (sum of incident triangle
    tip angles).  The alignment direction bisects the projected outward
    normals of the two incident boundary edges; corner nodes of index
    +-1/4 get that direction pre-rotated by pi/4 about the node normal
    before takes the 4th power.
    """
    if not mesh.has_boundary:
        return BoundaryInfo(nodes={})
    out = {}
    # outward in-plane normal per directed boundary edge, keyed by node
    out_normals = {}
    for t in range(mesh.n_tris):
        a, b, c = mesh.tris[t]
        for k, (i, j) in enumerate(((a, b), (b, c), (c, a))):
            e = mesh.tri_edges[t, k]
            if not mesh.boundary_edge[e]:
                continue
            edir = unit(mesh.nodes[j] - mesh.nodes[i])
            onrm = np.cross(edir, mesh.tri_normals[t])
            out_normals.setdefault(i, []).append(onrm)
            out_normals.setdefault(j, []).append(onrm)
    for v in np.nonzero(mesh.boundary_node)[0]:
        v = int(v)
        angle = 0.0
        for t in mesh.node_tris[v]:
            angle += mesh.tip_angles[t, mesh.tri_local_index(t, v)]
        idx4 = _table_index4(angle)
        nv = frames.normals[v]
        ws = []
        for w in out_normals[v]:
            proj = w - np.dot(w, nv) * nv
            pl = np.linalg.norm(proj)
            if pl > 1e-12:
                ws.append(proj / pl)
        s = np.sum(ws, axis=0)
        if np.linalg.norm(s) < 1e-9:
            # slit-like corner, bisector undefined; fall back to first normal
            d = ws[0]
        else:
            d = s / np.linalg.norm(s)
        if idx4 in (1, -1):
            d = rotate_about_axis(d, nv, math.pi / 4.0)
        z = frames.frame_complex(v, d)
        z /= abs(z)
        out[v] = BoundaryNode(node=v, interior_angle=float(angle),
                              index4=idx4, d_vec=d, u=z ** 4 / abs(z ** 4))
    return BoundaryInfo(nodes=out)


# ---------------------------------------------------------------------------
# bundle


@dataclass
class Surface:
    """Mesh plus everything derived from it that later stages need."""
    mesh: TriMesh
    frames: TangentFrames
    transport: EdgeTransport
    boundary: BoundaryInfo

    @classmethod
    def build(cls, mesh):
        normals = vertex_normals(mesh)
        frames = build_tangent_frames(mesh, normals)
        transport = edge_transport_angles(mesh, frames)
        boundary = classify_boundary(mesh, frames)
        return cls(mesh=mesh, frames=frames, transport=transport,
                   boundary=boundary)

    def phi(self, i, j):
        return transport_phi(self.mesh, self.transport, i, j)
