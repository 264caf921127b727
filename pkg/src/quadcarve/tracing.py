"""Separatrix tracing.

Streamlines of the cross field are traced per triangle in the triangle's
own plane: Heun's predictor-corrector in regular triangles, and an exact
conformal-hyperbola traversal inside singular triangles.  Tracing is
stateful and sequential; already-traced curves stop later ones via three
rules: boundary exit, second crossing of any single curve, and an
orthogonal crossing of a port ray inside a singular triangle.
"""

import math
from dataclasses import dataclass, field as dfield

import numpy as np

from .errors import TraceError
from .geometry import line_crossing_angle, seg_intersect, tri_frame, wrap_pi

TWO_PI = 2.0 * math.pi

# termination reasons
BOUNDARY_EXIT = "BoundaryExit"
REPEAT_CROSS = "RepeatCross"
SINGULAR_T_JUNCTION = "SingularTriangleTJunction"
MERGED_HETEROCLINIC = "MergedHeteroclinic"
STEP_CAP = "StepCap"


@dataclass
class TraceConfig:
    heun_factor: float = 0.25          # step = factor * local mean edge
    rays: int = 64                     # predefined rays per singular sector
    tangential_threshold: float = math.pi / 8.0
    step_cap_factor: int = 50          # cap = factor * mesh edge count


@dataclass
class SurfacePoint:
    tri: int
    bary: np.ndarray
    xyz: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bary, float)
        if b.min() < -1e-9 or abs(b.sum() - 1.0) > 1e-9:
            raise TraceError(f"invalid barycentric coordinates {b}")
        self.bary = b
        self.xyz = np.asarray(self.xyz, float)


@dataclass
class Crossing:
    other: int
    my_param: float
    other_param: float
    point: np.ndarray
    kind: str            # "orthogonal" | "tangential"
    angle: float
    ordinal: int
    same_direction: bool = False


@dataclass
class Separatrix:
    """Oriented polyline on the surface with crossing records.

    points3[k] .. points3[k+1] lies inside triangle seg_tris[k].
    """
    sid: int
    origin: dict
    points3: list = dfield(default_factory=list)
    seg_tris: list = dfield(default_factory=list)
    termination: str = None
    term_anchor: dict = None
    crossings: list = dfield(default_factory=list)
    flags: list = dfield(default_factory=list)
    kind: str = "separatrix"
    origin2: dict = None   # second endpoint anchor after a merge

    @property
    def n_segments(self):
        return max(0, len(self.points3) - 1)

    def length(self):
        pts = np.asarray(self.points3)
        if len(pts) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    def last_direction(self):
        a, b = self.points3[-2], self.points3[-1]
        return np.asarray(b) - np.asarray(a)


@dataclass
class HyperbolaArc:
    """Traversal of one singular sector: xy = A_q under g(z) = z^((4-d)/8)."""
    sing_tri: int
    anchor: float
    orientation: int
    exponent: float
    A_q: float
    phi_entry: float
    points2: list


# ---------------------------------------------------------------------------
# per-triangle caches


class _TriCache:
    """Planar frames, 2D corner coordinates and interpolation data."""

    def __init__(self, surface, cross_field, singular_tris):
        mesh = surface.mesh
        self.surface = surface
        self.field = cross_field
        self.singular_tris = set(singular_tris)
        m = mesh.n_tris
        self.origin = np.empty((m, 3))
        self.X = np.empty((m, 3))
        self.Y = np.empty((m, 3))
        self.N = np.empty((m, 3))
        self.corners2 = np.empty((m, 3, 2))
        self.h = np.empty(m)
        for t in range(m):
            p = mesh.nodes[mesh.tris[t]]
            o, X, Y, N = tri_frame(p[0], p[1], p[2])
            self.origin[t], self.X[t], self.Y[t], self.N[t] = o, X, Y, N
            for k in range(3):
                d = p[k] - o
                self.corners2[t, k, 0] = np.dot(d, X)
                self.corners2[t, k, 1] = np.dot(d, Y)
            e = [np.linalg.norm(p[1] - p[0]), np.linalg.norm(p[2] - p[1]),
                 np.linalg.norm(p[0] - p[2])]
            self.h[t] = sum(e) / 3.0
        self._args = {}
        self._edge_angle = {}

    def to2(self, t, xyz):
        d = xyz - self.origin[t]
        return float(np.dot(d, self.X[t])), float(np.dot(d, self.Y[t]))

    def to3(self, t, xy):
        return self.origin[t] + xy[0] * self.X[t] + xy[1] * self.Y[t]

    def center2(self, t):
        c = self.corners2[t]
        return (float(c[:, 0].mean()), float(c[:, 1].mean()))

    def bary(self, t, xy):
        c = self.corners2[t]
        v0x, v0y = c[1, 0] - c[0, 0], c[1, 1] - c[0, 1]
        v1x, v1y = c[2, 0] - c[0, 0], c[2, 1] - c[0, 1]
        det = v0x * v1y - v0y * v1x
        px, py = xy[0] - c[0, 0], xy[1] - c[0, 1]
        b1 = (px * v1y - py * v1x) / det
        b2 = (v0x * py - v0y * px) / det
        return np.array([1.0 - b1 - b2, b1, b2])

    def node_frame_angle_in_tri(self, t, v):
        """Angle of node v's basis1, rotated into triangle t's plane."""
        frames = self.surface.frames
        nv = frames.normals[v]
        N = self.N[t]
        b1 = frames.basis1[v]
        axis = np.cross(nv, N)
        s = np.linalg.norm(axis)
        c = float(np.dot(nv, N))
        if s >= 1e-14:
            axis = axis / s
            ang = math.atan2(s, c)
            b1 = (b1 * math.cos(ang) + np.cross(axis, b1) * math.sin(ang)
                  + axis * np.dot(axis, b1) * (1.0 - math.cos(ang)))
        elif c < 0.0:
            raise TraceError(f"node {v} normal opposes triangle {t} normal")
        return math.atan2(float(np.dot(b1, self.Y[t])),
                          float(np.dot(b1, self.X[t])))

    def tri_args(self, t):
        """Unwrapped representation-vector arguments at the corners of a
        non-singular triangle, in the triangle frame."""
        cached = self._args.get(t)
        if cached is not None:
            return cached
        if t in self.singular_tris:
            raise TraceError(
                f"direction interpolation requested in singular triangle {t}")
        mesh = self.surface.mesh
        args = []
        for v in mesh.tris[t]:
            v = int(v)
            delta = self.node_frame_angle_in_tri(t, v)
            args.append(4.0 * delta + float(np.angle(self.field.u[v])))
        a0 = wrap_pi(args[0])
        a1 = a0 + wrap_pi(args[1] - a0)
        a2 = a1 + wrap_pi(args[2] - a1)
        closure = wrap_pi(args[0] - a2) + a2 - a0
        if abs(closure) > 1e-6:
            raise TraceError(
                f"triangle {t}: representation argument does not close "
                f"(residual {closure:.2e}); triangle is singular")
        out = (a0, a1, a2)
        self._args[t] = out
        return out

    def edge_angle(self, t, i, j):
        """Angle of the 3D edge vector i -> j in triangle t's frame."""
        key = (t, i, j)
        a = self._edge_angle.get(key)
        if a is None:
            mesh = self.surface.mesh
            d = mesh.nodes[j] - mesh.nodes[i]
            a = math.atan2(float(np.dot(d, self.Y[t])),
                           float(np.dot(d, self.X[t])))
            self._edge_angle[key] = a
        return a


def interpolate_direction(cache, t, bary, omega):
    """Direction angle of the cross branch nearest heading omega, at a
    barycentric point of a non-singular triangle."""
    a0, a1, a2 = cache.tri_args(t)
    a = bary[0] * a0 + bary[1] * a1 + bary[2] * a2
    base = a / 4.0
    k = round((omega - base) / (math.pi / 2.0))
    return base + k * (math.pi / 2.0)


# ---------------------------------------------------------------------------
# crossing registry


class _Registry:
    """Per-triangle index of already-emitted curve segments (2D in the
    triangle's own frame)."""

    def __init__(self):
        self.by_tri = {}

    def add(self, tri, sid, seg_idx, a2, b2):
        self.by_tri.setdefault(tri, []).append((sid, seg_idx, a2, b2))

    def remove_curve(self, sid, min_seg=0):
        for tri in list(self.by_tri):
            self.by_tri[tri] = [e for e in self.by_tri[tri]
                                if not (e[0] == sid and e[1] >= min_seg)]

    def query(self, tri):
        return self.by_tri.get(tri, ())


def _seed_registry(cache, curves):
    reg = _Registry()
    for sep in curves:
        for k in range(sep.n_segments):
            t = sep.seg_tris[k]
            a2 = cache.to2(t, np.asarray(sep.points3[k]))
            b2 = cache.to2(t, np.asarray(sep.points3[k + 1]))
            reg.add(t, sep.sid, k, a2, b2)
    return reg


@dataclass
class _Policy:
    skip_near: tuple = None          # (point2, tri)
    first_crossing_stops: bool = False


# ---------------------------------------------------------------------------
# tracer


class Tracer:
    """Sequential separatrix tracer with a shared crossing registry."""

    def __init__(self, surface, cross_field, singularities, config=None,
                 curves=None):
        self.surface = surface
        self.field = cross_field
        self.config = config or TraceConfig()
        self.sings = {s.tri: s for s in singularities}
        self.cache = _TriCache(surface, cross_field, set(self.sings))
        self.step_cap = self.config.step_cap_factor * surface.mesh.n_edges
        self.eps_len = 1e-6 * surface.mesh.mean_edge_length
        self.curves = {}
        self.merged_into = {}
        self._next_sid = 0
        self.port_curve = {}   # (sing tri, port k) -> sid
        self._port_rays = self._build_port_rays()
        if curves:
            for c in curves:
                self.curves[c.sid] = c
                self._next_sid = max(self._next_sid, c.sid + 1)
            self.registry = _seed_registry(self.cache, curves)
        else:
            self.registry = _Registry()

    # -- port rays ------------------------------------------------------

    def _build_port_rays(self):
        """Straight separatrix rays from each singularity barycenter to
        its triangle boundary, used by stopping rule 3 regardless of
        whether the port curve has been traced yet."""
        rays = {}
        for t, s in self.sings.items():
            a2 = self.cache.center2(t)
            lst = []
            for k, ang in enumerate(s.port_angles):
                hit = _ray_triangle_exit(a2, ang, self.cache.corners2[t])
                if hit is not None:
                    lst.append((k, a2, hit, ang))
            rays[t] = lst
        return rays

    def port_ray(self, tri, k):
        for (kk, a2, b2, ang) in self._port_rays.get(tri, ()):
            if kk == k:
                return a2, b2, ang
        raise KeyError((tri, k))

    # -- public entry points ---------------------------------------------

    def trace_all(self):
        """Trace boundary-corner separatrices first, then singularity
        ports, in a fixed global order."""
        bnd = self.surface.boundary
        for v in sorted(bnd.corner_nodes):
            b = bnd.nodes[v]
            n_sectors = 2 - b.index4
            for j in range(1, n_sectors):
                self._trace_from_corner(v, j, n_sectors)
        for t in sorted(self.sings):
            s = self.sings[t]
            for k in range(s.n_ports):
                self._trace_from_port(s, k)
        self._fixup_hanging()
        return self.live_curves()

    def live_curves(self):
        return [c for c in self.curves.values() if c.termination is not None]

    def resolve_sid(self, sid):
        while sid in self.merged_into:
            sid = self.merged_into[sid]
        return sid

    def _new_sep(self, origin, kind="separatrix"):
        sep = Separatrix(sid=self._next_sid, origin=origin, kind=kind)
        self._next_sid += 1
        self.curves[sep.sid] = sep
        return sep

    # -- launches ---------------------------------------------------------

    def _trace_from_port(self, sing, k):
        t = sing.tri
        sep = self._new_sep({"kind": "singularity", "tri": t, "port": k})
        self.port_curve[(t, k)] = sep.sid
        a2, b2, ang = self.port_ray(t, k)
        sep.points3.append(self.cache.to3(t, a2))
        policy = _Policy(skip_near=(a2, t))
        stop = self._emit_segment(sep, t, a2, b2, policy)
        if stop:
            return sep
        exit_info = self._edge_exit(t, b2)
        if exit_info is None:
            self._terminate(sep, STEP_CAP, {"kind": "open"},
                            flag="port ray did not reach the triangle edge")
            return sep
        nxt = self._continue_from_exit(sep, t, exit_info, ang, policy)
        if nxt is not None:
            self._run(sep, *nxt, policy)
        return sep

    def _trace_from_corner(self, v, j, n_sectors):
        mesh = self.surface.mesh
        fan = mesh.node_fan(v)
        tips = [mesh.tip_angles[t, mesh.tri_local_index(t, v)] for t in fan]
        total = sum(tips)
        target = total * j / n_sectors
        cum = 0.0
        tri, local = fan[-1], tips[-1]
        for t, tip in zip(fan, tips):
            if target <= cum + tip + 1e-12:
                tri, local = t, target - cum
                break
            cum += tip
        k = mesh.tri_local_index(tri, v)
        w = int(mesh.tris[tri][(k + 1) % 3])
        ang = self.cache.edge_angle(tri, v, w) + local
        sep = self._new_sep({"kind": "corner", "node": int(v), "port": j})
        p2 = (float(self.cache.corners2[tri, k, 0]),
              float(self.cache.corners2[tri, k, 1]))
        sep.points3.append(mesh.nodes[v].copy())
        policy = _Policy(skip_near=(p2, tri))
        self._run(sep, tri, p2, ang, policy)
        return sep

    def extend(self, sep, first_crossing_stops=True):
        """Resume tracing a terminated curve from its free end."""
        if sep.n_segments < 1:
            raise TraceError(f"curve {sep.sid} too short to extend")
        sep.termination = None
        sep.term_anchor = None
        t, p2, omega = self._last_state(sep)
        policy = _Policy(skip_near=(p2, t),
                         first_crossing_stops=first_crossing_stops)
        self._run(sep, t, p2, omega, policy)
        return sep

    def _last_state(self, sep):
        t = sep.seg_tris[-1]
        p2 = self.cache.to2(t, np.asarray(sep.points3[-1]))
        d = sep.last_direction()
        omega = math.atan2(float(np.dot(d, self.cache.Y[t])),
                           float(np.dot(d, self.cache.X[t])))
        return t, p2, omega

    # -- main loop --------------------------------------------------------

    def _run(self, sep, t, p2, omega, policy):
        cache = self.cache
        steps = 0
        while True:
            if sep.termination is not None:
                return
            if steps >= self.step_cap:
                self._terminate(sep, STEP_CAP, {"kind": "open"},
                                flag="step cap reached (limit cycle?)")
                return
            steps += 1
            if t in self.sings:
                res = self._traverse_singular(sep, t, p2, omega, policy)
                if res is True:
                    return
                t, p2, omega = res
                continue
            h = cache.h[t] * self.config.heun_factor
            bary = cache.bary(t, p2)
            ang1 = interpolate_direction(cache, t, bary, omega)
            v1 = (math.cos(ang1), math.sin(ang1))
            mid = (p2[0] + h * v1[0], p2[1] + h * v1[1])
            bmid = cache.bary(t, mid)
            if bmid.min() >= 0.0:
                ang2 = interpolate_direction(cache, t, bmid, ang1)
                v2 = (math.cos(ang2), math.sin(ang2))
                q2 = (p2[0] + 0.5 * h * (v1[0] + v2[0]),
                      p2[1] + 0.5 * h * (v1[1] + v2[1]))
            else:
                q2 = mid
            bq = cache.bary(t, q2)
            if bq.min() >= 0.0:
                stop = self._emit_segment(sep, t, p2, q2, policy)
                if stop:
                    return
                omega = math.atan2(q2[1] - p2[1], q2[0] - p2[0])
                p2 = q2
                continue
            exit_info = self._segment_exit(t, p2, q2)
            if exit_info is None:
                exit_info = self._edge_exit(t, p2)
                if exit_info is None:
                    self._terminate(sep, STEP_CAP, {"kind": "open"},
                                    flag=f"stalled in triangle {t}")
                    return
                x2 = p2
                omega = ang1
            else:
                x2 = exit_info[3]
                stop = self._emit_segment(sep, t, p2, x2, policy)
                if stop:
                    return
                if x2 != p2:
                    omega = math.atan2(x2[1] - p2[1], x2[0] - p2[0])
            nxt = self._continue_from_exit(sep, t, exit_info, omega, policy)
            if nxt is None:
                return
            t, p2, omega = nxt

    # -- segment emission and stopping rules ------------------------------

    def _emit_segment(self, sep, t, a2, b2, policy):
        """Append one polyline segment inside triangle t, after running
        it through the stopping rules.  Returns True if the curve
        terminated (possibly truncating the segment)."""
        if math.hypot(b2[0] - a2[0], b2[1] - a2[1]) < 1e-15:
            return False
        hits = self._collect_hits(sep, t, a2, b2, policy)
        cut = None
        for hit in hits:
            if hit["class"] == "portray":
                sid = self.port_curve.get((hit["tri"], hit["port"]))
                if sid is not None:
                    anchor = {"kind": "curve", "sid": sid,
                              "point": hit["p3"]}
                else:
                    anchor = {"kind": "portray", "tri": hit["tri"],
                              "port": hit["port"], "point": hit["p3"]}
                cut = (hit, SINGULAR_T_JUNCTION, anchor)
                break
            other = self.curves[hit["sid"]]
            tang = hit["angle"] < self.config.tangential_threshold
            if tang and not hit["same_dir"] and other.sid != sep.sid \
                    and other.kind != "boundary":
                self._merge(sep, other, hit, t)
                return True
            ordinal = 1 + sum(1 for c in sep.crossings
                              if c.other == other.sid)
            kind_name = "tangential" if tang else "orthogonal"
            my_param = sep.n_segments + hit["t"]
            sep.crossings.append(Crossing(
                other=other.sid, my_param=my_param,
                other_param=hit["param"], point=hit["p3"],
                kind=kind_name, angle=hit["angle"], ordinal=ordinal,
                same_direction=hit["same_dir"]))
            back = 1 + sum(1 for c in other.crossings if c.other == sep.sid)
            other.crossings.append(Crossing(
                other=sep.sid, my_param=hit["param"], other_param=my_param,
                point=hit["p3"], kind=kind_name, angle=hit["angle"],
                ordinal=back, same_direction=hit["same_dir"]))
            if tang and hit["same_dir"]:
                sep.flags.append(
                    f"same-direction tangential crossing with {other.sid}")
            if policy.first_crossing_stops or ordinal >= 2:
                cut = (hit, REPEAT_CROSS,
                       {"kind": "curve", "sid": other.sid,
                        "point": hit["p3"]})
                break
        if cut is not None:
            hit, reason, anchor = cut
            self._append_point(sep, t, hit["p2"])
            self._terminate(sep, reason, anchor)
            return True
        self._append_point(sep, t, b2)
        return False

    def _collect_hits(self, sep, t, a2, b2, policy):
        hits = []
        if policy.skip_near is not None:
            skip2, skip_tri = policy.skip_near
        else:
            skip2, skip_tri = None, -1
        seg_dir = (b2[0] - a2[0], b2[1] - a2[1])
        skip_r = 4.0 * self.eps_len
        if t in self._port_rays:
            cx, cy = self.cache.center2(t)
            for (k, ra, rb, ang) in self._port_rays[t]:
                res = seg_intersect(a2, b2, ra, rb)
                if res is None:
                    continue
                tt, uu, p = res
                if math.hypot(p[0] - cx, p[1] - cy) < skip_r:
                    continue
                if skip_tri == t and skip2 is not None and \
                        math.hypot(p[0] - skip2[0], p[1] - skip2[1]) < skip_r:
                    continue
                ray_dir = (rb[0] - ra[0], rb[1] - ra[1])
                angle = line_crossing_angle(seg_dir, ray_dir)
                if angle < self.config.tangential_threshold:
                    continue  # tangential to the ray: not a rule-3 cut
                hits.append({"class": "portray", "t": tt, "tri": t,
                             "port": k, "p2": p,
                             "p3": self.cache.to3(t, p), "angle": angle})
        for (sid, seg_idx, qa, qb) in self.registry.query(t):
            if sid == sep.sid and seg_idx >= sep.n_segments - 1:
                continue
            res = seg_intersect(a2, b2, qa, qb)
            if res is None:
                continue
            tt, uu, p = res
            if skip_tri == t and skip2 is not None and \
                    math.hypot(p[0] - skip2[0], p[1] - skip2[1]) < skip_r:
                continue
            odir = (qb[0] - qa[0], qb[1] - qa[1])
            angle = line_crossing_angle(seg_dir, odir)
            same_dir = (seg_dir[0] * odir[0] + seg_dir[1] * odir[1]) >= 0.0
            hits.append({"class": "curve", "t": tt, "sid": sid,
                         "param": seg_idx + uu, "p2": p,
                         "p3": self.cache.to3(t, p), "angle": angle,
                         "same_dir": same_dir})
        hits.sort(key=lambda hh: hh["t"])
        return hits

    def _append_point(self, sep, t, p2):
        p3 = self.cache.to3(t, p2)
        a2 = self.cache.to2(t, np.asarray(sep.points3[-1]))
        seg_idx = sep.n_segments
        sep.points3.append(p3)
        sep.seg_tris.append(t)
        self.registry.add(t, sep.sid, seg_idx, a2, p2)

    def _terminate(self, sep, reason, anchor, flag=None):
        sep.termination = reason
        sep.term_anchor = anchor
        if flag:
            sep.flags.append(flag)

    # -- geometry: exits and transfers ------------------------------------

    def _segment_exit(self, t, p2, q2):
        """First triangle-boundary crossing of the segment p2 -> q2.

        Returns (local_k, s_param, edge_id, exit2) or None."""
        bp = self.cache.bary(t, p2)
        bq = self.cache.bary(t, q2)
        best = None
        for k in range(3):
            if bq[k] >= 0.0 or bq[k] >= bp[k]:
                continue
            tk = bp[k] / (bp[k] - bq[k])
            if best is None or tk < best[0]:
                best = (tk, k)
        if best is None:
            return None
        tk, k = best
        tk = min(max(tk, 0.0), 1.0)
        exit2 = (p2[0] + tk * (q2[0] - p2[0]), p2[1] + tk * (q2[1] - p2[1]))
        bx = self.cache.bary(t, exit2)
        s = float(bx[(k + 2) % 3] / max(bx[(k + 1) % 3] + bx[(k + 2) % 3],
                                        1e-300))
        e = int(self.surface.mesh.tri_edges[t, (k + 1) % 3])
        return (k, s, e, exit2)

    def _edge_exit(self, t, p2):
        """Exit data for a point already sitting on the triangle rim."""
        b = self.cache.bary(t, p2)
        k = int(np.argmin(b))
        if b[k] > 1e-9:
            return None
        s = float(b[(k + 2) % 3] / max(b[(k + 1) % 3] + b[(k + 2) % 3],
                                       1e-300))
        e = int(self.surface.mesh.tri_edges[t, (k + 1) % 3])
        return (k, s, e, p2)

    def _continue_from_exit(self, sep, t, exit_info, omega, policy):
        """Transfer across the exit edge, terminating on the boundary.

        Returns the new (tri, point2, omega) or None if terminated."""
        mesh = self.surface.mesh
        k, s, e, exit2 = exit_info
        i = int(mesh.tris[t][(k + 1) % 3])
        j = int(mesh.tris[t][(k + 2) % 3])
        exit3 = (1.0 - s) * mesh.nodes[i] + s * mesh.nodes[j]
        if mesh.boundary_edge[e]:
            edge_ang = self.cache.edge_angle(t, i, j)
            exit_angle = line_crossing_angle(
                (math.cos(omega), math.sin(omega)),
                (math.cos(edge_ang), math.sin(edge_ang)))
            anchor = {"kind": "boundary", "edge": e, "i": i, "j": j,
                      "s": s, "point": exit3}
            flag = None
            if exit_angle < self.config.tangential_threshold:
                flag = f"tangential boundary exit at edge {e}"
            self._terminate(sep, BOUNDARY_EXIT, anchor, flag=flag)
            return None
        nt = mesh.other_tri(e, t)
        p2n = self.cache.to2(nt, exit3)
        # pull a hair inside nt so curves running exactly along an edge
        # do not bounce between its two triangles
        cx, cy = self.cache.center2(nt)
        lam = 1e-9
        p2n = (p2n[0] + lam * (cx - p2n[0]), p2n[1] + lam * (cy - p2n[1]))
        omega_n = omega - self.cache.edge_angle(t, i, j) \
            + self.cache.edge_angle(nt, i, j)
        return nt, p2n, omega_n

    # -- singular triangles ------------------------------------------------

    def singular_entry_frame(self, sing, entry2, omega):
        """Sector frame for a point entering a singular triangle."""
        t = sing.tri
        center2 = self.cache.center2(t)
        diam = self.cache.h[t] * 3.0
        if math.hypot(entry2[0] - center2[0],
                      entry2[1] - center2[1]) < 1e-12 * diam:
            raise TraceError(
                f"entry point coincides with singularity in triangle {t}")
        if sing.n_ports <= 0:
            raise TraceError(
                f"singularity in triangle {t} has no ports "
                f"(index {sing.index4}/4)")
        return sector_frame(sing.n_ports, sing.port_angles[0], center2,
                            entry2, omega)

    def hyperbola_points(self, frame, phi_from=None):
        pts, phis = hyperbola_ray_points(frame, max(8, self.config.rays),
                                         phi_from=phi_from)
        return pts, phis

    def _traverse_singular(self, sep, t, p2, omega, policy):
        """Hyperbolic traversal; returns True if the curve terminated or
        (tri, point2, omega) after transferring out of the triangle."""
        sing = self.sings[t]
        try:
            frame = self.singular_entry_frame(sing, p2, omega)
        except TraceError as exc:
            self._terminate(sep, STEP_CAP, {"kind": "open"}, flag=str(exc))
            return True
        cx, cy = frame.center2
        psi_q = math.atan2(p2[1] - cy, p2[0] - cx)
        if abs(math.sin(omega - psi_q)) < 1e-9 and \
                math.cos(omega - psi_q) < 0.0:
            # inward radial entry along a separatrix: heteroclinic hit
            stop = self._emit_segment(sep, t, p2, (cx, cy), policy)
            if not stop:
                self._terminate(sep, MERGED_HETEROCLINIC,
                                {"kind": "singularity", "tri": t})
            return True
        pts, phis = self.hyperbola_points(frame)
        # tangent tail guarantees the polyline leaves the triangle
        if len(pts) >= 2:
            last, prev = pts[-1], pts[-2]
        elif len(pts) == 1:
            last, prev = pts[0], p2
        else:
            last, prev = p2, None
        if prev is None:
            dx, dy = math.cos(omega), math.sin(omega)
        else:
            dx, dy = last[0] - prev[0], last[1] - prev[1]
        norm = math.hypot(dx, dy)
        if norm < 1e-300:
            dx, dy, norm = math.cos(omega), math.sin(omega), 1.0
        reach = 30.0 * self.cache.h[t]
        pts.append((last[0] + dx / norm * reach, last[1] + dy / norm * reach))
        cur = p2
        for nxt in pts:
            bq = self.cache.bary(t, nxt)
            if bq.min() >= 0.0:
                stop = self._emit_segment(sep, t, cur, nxt, policy)
                if stop:
                    return True
                cur = nxt
                continue
            exit_info = self._segment_exit(t, cur, nxt)
            if exit_info is None:
                exit_info = self._edge_exit(t, cur)
                if exit_info is None:
                    self._terminate(sep, STEP_CAP, {"kind": "open"},
                                    flag=f"stalled in singular triangle {t}")
                    return True
                x2 = cur
            else:
                x2 = exit_info[3]
                stop = self._emit_segment(sep, t, cur, x2, policy)
                if stop:
                    return True
                if x2 != cur:
                    omega = math.atan2(x2[1] - cur[1], x2[0] - cur[0])
            res = self._continue_from_exit(sep, t, exit_info, omega, policy)
            if res is None:
                return True
            return res
        self._terminate(sep, STEP_CAP, {"kind": "open"},
                        flag=f"hyperbola arc trapped in triangle {t}")
        return True

    # -- merging -----------------------------------------------------------

    def _truncate_at(self, sep, param, p3):
        """Cut a curve at polyline parameter `param`, ending it at p3;
        crossing records on the removed tail are deleted on both sides."""
        keep = int(math.floor(min(param, sep.n_segments - 1e-9)))
        tri = sep.seg_tris[keep]
        sep.points3 = sep.points3[:keep + 1] + [np.asarray(p3, float)]
        sep.seg_tris = sep.seg_tris[:keep + 1]
        dropped = [c for c in sep.crossings if c.my_param > param]
        sep.crossings = [c for c in sep.crossings if c.my_param <= param]
        for c in dropped:
            buddy = self.curves.get(c.other)
            if buddy is not None and buddy is not sep:
                buddy.crossings = [
                    cc for cc in buddy.crossings
                    if not (cc.other == sep.sid
                            and abs(cc.other_param - c.my_param) < 1e-9)]
        self.registry.remove_curve(sep.sid, min_seg=keep)
        a2 = self.cache.to2(tri, np.asarray(sep.points3[-2]))
        b2 = self.cache.to2(tri, np.asarray(sep.points3[-1]))
        self.registry.add(tri, sep.sid, keep, a2, b2)

    def _merge(self, sep, other, hit, t):
        self._append_point(sep, t, hit["p2"])
        self._finish_merge(sep, other, hit["param"], hit["p3"])

    def merge_opposite_tangential(self, sep_a, crossing):
        """Cut both curves at a tangential opposite-direction crossing
        and combine them into a single heteroclinic separatrix.

        Refuses orthogonal or same-direction crossings.
        """
        if crossing.angle >= self.config.tangential_threshold:
            raise TraceError(
                f"crossing angle {crossing.angle:.3f} is not tangential")
        if crossing.same_direction:
            raise TraceError(
                "same-direction tangential crossing cannot be merged")
        other = self.curves.get(self.resolve_sid(crossing.other))
        if other is None or other.sid == sep_a.sid:
            raise TraceError("merge target is gone or is the curve itself")
        self._truncate_at(sep_a, crossing.my_param, crossing.point)
        self._finish_merge(sep_a, other, crossing.other_param,
                           np.asarray(crossing.point, float))
        return sep_a

    def _finish_merge(self, sep, other, other_param, p3):
        """Truncate `other` at the crossing and splice it, reversed, onto
        the end of `sep`."""
        self._truncate_at(other, other_param, p3)
        L = len(sep.points3)
        n_other = len(other.points3) - 1  # kept segment count
        sep.points3 = sep.points3 + list(reversed(other.points3[:-1]))
        sep.seg_tris = sep.seg_tris + list(reversed(other.seg_tris))
        sep.origin2 = other.origin

        def remap(q):
            return (L - 1) + (n_other - q)

        for c in other.crossings:
            sep.crossings.append(Crossing(
                other=c.other, my_param=remap(c.my_param),
                other_param=c.other_param, point=c.point, kind=c.kind,
                angle=c.angle, ordinal=c.ordinal,
                same_direction=c.same_direction))
        for buddy in self.curves.values():
            if buddy is other:
                continue
            for cc in buddy.crossings:
                if cc.other == other.sid:
                    cc.other = sep.sid
                    cc.other_param = remap(cc.other_param)
        self.registry.remove_curve(other.sid)
        self.registry.remove_curve(sep.sid)
        del self.curves[other.sid]
        self.merged_into[other.sid] = sep.sid
        self.port_curve = {k: (sep.sid if v == other.sid else v)
                           for k, v in self.port_curve.items()}
        for kseg in range(sep.n_segments):
            tt = sep.seg_tris[kseg]
            a2 = self.cache.to2(tt, np.asarray(sep.points3[kseg]))
            b2 = self.cache.to2(tt, np.asarray(sep.points3[kseg + 1]))
            self.registry.add(tt, sep.sid, kseg, a2, b2)
        self._terminate(sep, MERGED_HETEROCLINIC,
                        {"kind": "merged", "origin2": other.origin})

    # -- post-trace fixup ---------------------------------------------------

    def _fixup_hanging(self):
        """Re-extend curves whose on-curve termination target was removed
        by a merge truncation."""
        for _ in range(len(self.curves) + 1):
            hanging = []
            for sep in self.curves.values():
                a = sep.term_anchor or {}
                if a.get("kind") != "curve":
                    continue
                target = self.curves.get(self.resolve_sid(a["sid"]))
                if target is None:
                    hanging.append(sep)
                    continue
                p = np.asarray(a["point"])
                if _point_on_polyline(p, target.points3) > 8.0 * self.eps_len:
                    hanging.append(sep)
            if not hanging:
                return
            for sep in hanging:
                self.extend(sep, first_crossing_stops=False)


@dataclass
class SectorFrame:
    """Conformal coordinates of one singular-sector traversal.

    Local angle lam (0 at the anchor port, growing in the traversal
    direction sigma) maps to phi = exponent * lam with exponent
    (4 - d)/8; radius r maps to rho = r ** exponent.  The traversed
    streamline is the hyperbola x y = A_q in the (rho, phi) quadrant.
    """
    sigma: int
    anchor: float
    lam_q: float
    rho_q: float
    phi_q: float
    center2: tuple
    r_q: float
    exponent: float

    @property
    def A_q(self):
        return self.rho_q ** 2 * math.sin(self.phi_q) * math.cos(self.phi_q)


def sector_frame(n_ports, base_angle, center2, entry2, omega):
    """Sector frame for an entry point near a singularity with the given
    port layout.  The anchor is the nearest port on the clockwise side
    of the traversal (counterclockwise when the heading circulates
    clockwise); phi_q lands in (0, pi/2).
    """
    vx, vy = entry2[0] - center2[0], entry2[1] - center2[1]
    r_q = math.hypot(vx, vy)
    psi_q = math.atan2(vy, vx)
    sigma = 1 if math.sin(omega - psi_q) >= 0.0 else -1
    sector = TWO_PI / n_ports
    if sigma > 0:
        lam_q = (psi_q - base_angle) % sector
        anchor = psi_q - lam_q
    else:
        lam_q = (base_angle - psi_q) % sector
        anchor = psi_q + lam_q
    if lam_q < 1e-9:
        # entering exactly on a port ray mid-crossing: at the vertex
        anchor -= sigma * sector
        lam_q = sector
    e_g = n_ports / 8.0
    return SectorFrame(sigma=sigma, anchor=anchor, lam_q=lam_q,
                       rho_q=r_q ** e_g, phi_q=e_g * lam_q,
                       center2=center2, r_q=r_q, exponent=e_g)


def hyperbola_radius(frame, phi):
    """Triangle-plane radius of the traversal at conformal angle phi."""
    rho = math.sqrt(frame.A_q / (math.sin(phi) * math.cos(phi)))
    return rho ** (1.0 / frame.exponent)


def hyperbola_ray_points(frame, n_rays, phi_from=None):
    """Streamline samples along the predefined rays phi in (0, pi/2),
    mapped back to the triangle plane by the inverse conformal map."""
    lo = frame.phi_q if phi_from is None else phi_from
    pts, phis = [], []
    cx, cy = frame.center2
    for r in range(n_rays):
        phi = (r + 1) * (math.pi / 2.0) / (n_rays + 1)
        if phi <= lo + 1e-12:
            continue
        r_z = hyperbola_radius(frame, phi)
        lam = phi / frame.exponent
        psi = frame.anchor + frame.sigma * lam
        pts.append((cx + r_z * math.cos(psi), cy + r_z * math.sin(psi)))
        phis.append(phi)
    return pts, phis


def _ray_triangle_exit(a2, ang, corners2):
    """Exit point of a ray from a2 (inside) against a triangle given by
    its 2D corner coordinates; None if the ray degenerates."""
    d = (math.cos(ang), math.sin(ang))
    best = None
    for k in range(3):
        p = corners2[k]
        q = corners2[(k + 1) % 3]
        ex, ey = q[0] - p[0], q[1] - p[1]
        denom = d[0] * ey - d[1] * ex
        if abs(denom) < 1e-14:
            continue
        rx, ry = p[0] - a2[0], p[1] - a2[1]
        tt = (rx * ey - ry * ex) / denom
        if tt <= 1e-12:
            continue
        hx, hy = a2[0] + tt * d[0], a2[1] + tt * d[1]
        uu = ((hx - p[0]) * ex + (hy - p[1]) * ey) / (ex * ex + ey * ey)
        if -1e-9 <= uu <= 1.0 + 1e-9:
            if best is None or tt < best[0]:
                best = (tt, (hx, hy))
    return best[1] if best else None


def _point_on_polyline(p, pts):
    pts = np.asarray(pts)
    if len(pts) < 2:
        return float("inf")
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    ap = p[None, :] - a
    denom = (ab * ab).sum(axis=1)
    denom[denom == 0.0] = 1.0
    t = np.clip((ap * ab).sum(axis=1) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return float(np.linalg.norm(proj - p[None, :], axis=1).min())


# ---------------------------------------------------------------------------
# standalone stepping helpers


class StreamlineStepper:
    """Reusable Heun stepper over a fixed surface and field; splits steps
    at triangle edges and unfolds the heading across them."""

    def __init__(self, surface, cross_field, singular_tris=()):
        self.surface = surface
        self.cache = _TriCache(surface, cross_field, singular_tris)

    def step(self, point, heading, h):
        """One Heun step of arclength h from a SurfacePoint along a 3D
        heading.  Returns (SurfacePoint, heading3, event) where event is
        None or ('boundary', exit_xyz)."""
        cache = self.cache
        mesh = self.surface.mesh
        t = point.tri
        p2 = cache.to2(t, point.xyz)
        omega = math.atan2(float(np.dot(heading, cache.Y[t])),
                           float(np.dot(heading, cache.X[t])))
        remaining = float(h)
        guard = 0
        while remaining > 1e-15 and guard < 64:
            guard += 1
            bary = cache.bary(t, p2)
            ang1 = interpolate_direction(cache, t, bary, omega)
            v1 = (math.cos(ang1), math.sin(ang1))
            mid = (p2[0] + remaining * v1[0], p2[1] + remaining * v1[1])
            bmid = cache.bary(t, mid)
            if bmid.min() >= 0.0:
                ang2 = interpolate_direction(cache, t, bmid, ang1)
                v2 = (math.cos(ang2), math.sin(ang2))
                q2 = (p2[0] + 0.5 * remaining * (v1[0] + v2[0]),
                      p2[1] + 0.5 * remaining * (v1[1] + v2[1]))
            else:
                q2 = mid
            bq = cache.bary(t, q2)
            if bq.min() >= 0.0:
                dx, dy = q2[0] - p2[0], q2[1] - p2[1]
                if math.hypot(dx, dy) > 0.0:
                    omega = math.atan2(dy, dx)
                p2 = q2
                break
            bp = cache.bary(t, p2)
            best = None
            for k in range(3):
                if bq[k] >= 0.0 or bq[k] >= bp[k]:
                    continue
                tk = bp[k] / (bp[k] - bq[k])
                if best is None or tk < best[0]:
                    best = (tk, k)
            if best is None:
                break
            tk, k = best
            x2 = (p2[0] + tk * (q2[0] - p2[0]), p2[1] + tk * (q2[1] - p2[1]))
            used = math.hypot(x2[0] - p2[0], x2[1] - p2[1])
            remaining = max(0.0, remaining - used)
            if used > 0.0:
                omega = math.atan2(x2[1] - p2[1], x2[0] - p2[0])
            bx = cache.bary(t, x2)
            s = float(bx[(k + 2) % 3] / max(bx[(k + 1) % 3] + bx[(k + 2) % 3],
                                            1e-300))
            e = int(mesh.tri_edges[t, (k + 1) % 3])
            i = int(mesh.tris[t][(k + 1) % 3])
            j = int(mesh.tris[t][(k + 2) % 3])
            exit3 = (1.0 - s) * mesh.nodes[i] + s * mesh.nodes[j]
            if mesh.boundary_edge[e]:
                bary_exit = np.zeros(3)
                bary_exit[(k + 1) % 3] = 1.0 - s
                bary_exit[(k + 2) % 3] = s
                sp = SurfacePoint(tri=t, bary=bary_exit, xyz=exit3)
                return sp, _omega_to3(cache, t, omega), ("boundary", exit3)
            nt = mesh.other_tri(e, t)
            omega = omega - cache.edge_angle(t, i, j) \
                + cache.edge_angle(nt, i, j)
            t = nt
            p2 = cache.to2(t, exit3)
        bary = cache.bary(t, p2)
        bary = np.clip(bary, 0.0, None)
        bary = bary / bary.sum()
        sp = SurfacePoint(tri=t, bary=bary, xyz=cache.to3(t, p2))
        return sp, _omega_to3(cache, t, omega), None


def heun_step(surface, cross_field, point, heading, h, singular_tris=()):
    """One-off Heun step; for repeated stepping use StreamlineStepper."""
    return StreamlineStepper(surface, cross_field,
                             singular_tris).step(point, heading, h)


def _omega_to3(cache, t, omega):
    return math.cos(omega) * cache.X[t] + math.sin(omega) * cache.Y[t]


def trace_all(surface, cross_field, singularities, config=None):
    """Trace every boundary-corner and singularity-port separatrix."""
    tracer = Tracer(surface, cross_field, singularities, config=config)
    return tracer.trace_all(), tracer
