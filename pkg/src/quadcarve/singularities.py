"""Principle matchings, triangle indices, and singularity ports.

The index of a triangle counts the quarter turns a cross makes while
circulating it, after subtracting the transport holonomy of the cycle,
and is always an exact multiple of 1/4.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FieldError
from .geometry import rotate_align, tri_frame, to_plane, wrap_pi, wrap_quarter
from .mesh import transport_phi


def matching(theta_i, theta_j, phi_ij):
    """Smallest rotation relating neighboring crosses after transport.

    Returns the representative of theta_j - (theta_i + phi_ij) in
    [-pi/4, pi/4); exactly aligned crosses give 0.
    """
    return wrap_quarter(theta_j - (phi_ij + theta_i))


def triangle_index4(deltas, phis, tol=1e-6):
    """Triangle index in quarter units from the three directed-edge
    matchings and transport angles of its boundary cycle.

    The transport holonomy is the cycle sum of phi wrapped to
    (-pi, pi]; total circulation plus holonomy is a multiple of pi/2.
    """
    holonomy = wrap_pi(sum(phis))
    raw = (sum(deltas) + holonomy) / (2.0 * math.pi)
    d4 = round(raw * 4.0)
    if abs(raw * 4.0 - d4) > tol * 4.0:
        raise FieldError(
            f"triangle index {raw} is not a quarter integer (residual "
            f"{abs(raw - d4 / 4.0):.2e}); field inconsistent")
    return int(d4)


@dataclass
class Singularity:
    """One singular triangle of the cross field.

    index4 is the integer d with index d/4; the 4 - d ports are the
    directions in which separatrices leave, given both as angles in the
    triangle frame and as unit 3-vectors.
    """
    tri: int
    index4: int
    location: np.ndarray
    alpha: float
    port_angles: list
    port_dirs: list = field(default_factory=list)
    frame: tuple = None  # (origin, X, Y, N) of the triangle plane

    @property
    def index(self):
        return self.index4 / 4.0

    @property
    def n_ports(self):
        return 4 - self.index4


def triangle_indices4(surface, cross_field, tol=1e-6):
    """Index in quarter units for every triangle."""
    mesh = surface.mesh
    theta = cross_field.theta
    out = np.zeros(mesh.n_tris, dtype=np.int64)
    for t in range(mesh.n_tris):
        a, b, c = (int(v) for v in mesh.tris[t])
        deltas = []
        phis = []
        for i, j in ((a, b), (b, c), (c, a)):
            p = transport_phi(mesh, surface.transport, i, j)
            deltas.append(matching(theta[i], theta[j], p))
            phis.append(p)
        out[t] = triangle_index4(deltas, phis, tol=tol)
    return out


def triangle_index(surface, cross_field, t, tol=1e-6):
    """Index of one triangle as an exact quarter (d, denominator 4)."""
    mesh = surface.mesh
    theta = cross_field.theta
    a, b, c = (int(v) for v in mesh.tris[t])
    deltas, phis = [], []
    for i, j in ((a, b), (b, c), (c, a)):
        p = transport_phi(mesh, surface.transport, i, j)
        deltas.append(matching(theta[i], theta[j], p))
        phis.append(p)
    return triangle_index4(deltas, phis, tol=tol)


def _cross_angle_in_tri_plane(surface, cross_field, t, v):
    """Angle of one cross component of node v in triangle t's plane."""
    mesh = surface.mesh
    p = mesh.nodes[mesh.tris[t]]
    origin, X, Y, N = tri_frame(p[0], p[1], p[2])
    b1 = rotate_align(surface.frames.basis1[v], surface.frames.normals[v], N)
    frame_ang = math.atan2(float(np.dot(b1, Y)), float(np.dot(b1, X)))
    return frame_ang + float(np.angle(cross_field.u[v])) / 4.0, (origin, X, Y, N)


def detect_singularities(surface, cross_field, tol=1e-6):
    """Singular triangles with barycentric locations and ports.

    The reference angle alpha is measured from the barycenter-to-node
    ray of the lowest-indexed triangle node to the nearest cross
    component at that node, projected into the triangle plane.  Ports
    sit at alpha + 2 pi k / (4 - d).
    """
    mesh = surface.mesh
    idx4 = triangle_indices4(surface, cross_field, tol=tol)
    out = []
    for t in np.nonzero(idx4)[0]:
        t = int(t)
        d = int(idx4[t])
        if abs(d) > 4:
            raise FieldError(f"triangle {t} has pathological index {d}/4")
        nodes = [int(v) for v in mesh.tris[t]]
        v = min(nodes)
        bary = mesh.nodes[mesh.tris[t]].mean(axis=0)
        cross_ang, frame = _cross_angle_in_tri_plane(surface, cross_field,
                                                     t, v)
        origin, X, Y, N = frame
        ray = mesh.nodes[v] - bary
        ray_ang = math.atan2(float(np.dot(ray, Y)), float(np.dot(ray, X)))
        alpha = wrap_quarter(cross_ang - ray_ang)
        n_ports = 4 - d
        base = ray_ang + alpha
        angles = [wrap_pi(base + 2.0 * math.pi * k / n_ports)
                  for k in range(n_ports)]
        dirs = [math.cos(a) * X + math.sin(a) * Y for a in angles]
        out.append(Singularity(tri=t, index4=d, location=bary,
                               alpha=alpha, port_angles=angles,
                               port_dirs=dirs, frame=frame))
    return out


def interior_index_sum4(surface, cross_field, tol=1e-6):
    return int(triangle_indices4(surface, cross_field, tol=tol).sum())


def poincare_hopf_check(surface, cross_field, tol=1e-6):
    """(interior sum, boundary sum, euler characteristic), in quarters."""
    interior4 = interior_index_sum4(surface, cross_field, tol=tol)
    boundary4 = surface.boundary.index_sum4()
    return interior4, boundary4, surface.mesh.euler_characteristic


def singularities_to_csv(sings, path):
    with open(path, "w") as fh:
        fh.write("triangle,index,x,y,z,port_angles\n")
        for s in sings:
            ports = ";".join(repr(float(a)) for a in s.port_angles)
            fh.write(f"{s.tri},{s.index4}/4,{float(s.location[0])!r},"
                     f"{float(s.location[1])!r},{float(s.location[2])!r},"
                     f"{ports}\n")
