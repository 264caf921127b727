"""Small planar / vector helpers shared by the tracer and layout builder."""

import math

import numpy as np


def unit(v):
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n


def wrap_pi(a):
    """Wrap angle(s) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = -((-a + math.pi) % (2.0 * math.pi) - math.pi)
    return float(out) if out.ndim == 0 else out


def wrap_quarter(a):
    """Wrap angle(s) to [-pi/4, pi/4), the smallest rotation between crosses."""
    a = np.asarray(a, dtype=float)
    out = (a + math.pi / 4.0) % (math.pi / 2.0) - math.pi / 4.0
    return float(out) if out.ndim == 0 else out


def rotate_about_axis(v, axis, angle):
    """Rodrigues rotation of v about a unit axis."""
    axis = np.asarray(axis, float)
    v = np.asarray(v, float)
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1.0 - c)


def rotate_align(v, n_from, n_to):
    """Rotate v by the minimal rotation taking unit normal n_from onto n_to."""
    axis = np.cross(n_from, n_to)
    s = np.linalg.norm(axis)
    c = float(np.dot(n_from, n_to))
    if s < 1e-14:
        if c > 0.0:
            return np.asarray(v, float)
        raise ValueError("antipodal normals, rotation undefined")
    axis = axis / s
    return rotate_about_axis(v, axis, math.atan2(s, c))


def tri_frame(p0, p1, p2):
    """In-plane orthonormal frame of a triangle.

    Returns (origin, X, Y, N) with X along the first edge and N the
    oriented normal; N = X x Y.
    """
    e1 = p1 - p0
    n = np.cross(e1, p2 - p0)
    nn = np.linalg.norm(n)
    if nn == 0.0:
        raise ValueError("degenerate triangle")
    N = n / nn
    X = unit(e1)
    Y = np.cross(N, X)
    return p0, X, Y, N


def to_plane(p, origin, X, Y):
    d = p - origin
    return float(np.dot(d, X)), float(np.dot(d, Y))


def from_plane(xy, origin, X, Y):
    return origin + xy[0] * X + xy[1] * Y


def seg_intersect(p0, p1, q0, q1, eps=1e-12):
    """Proper intersection of two 2D segments.

    Parameters are plain (x, y) tuples.  Returns (t, u, (x, y)) with
    t, u in [0, 1) half-open on both segments, or None.  Near-parallel
    pairs are treated as non-crossing.
    """
    dx1, dy1 = p1[0] - p0[0], p1[1] - p0[1]
    dx2, dy2 = q1[0] - q0[0], q1[1] - q0[1]
    denom = dx1 * dy2 - dy1 * dx2
    scale = math.hypot(dx1, dy1) * math.hypot(dx2, dy2)
    if scale == 0.0 or abs(denom) < 1e-12 * scale:
        return None
    rx, ry = q0[0] - p0[0], q0[1] - p0[1]
    t = (rx * dy2 - ry * dx2) / denom
    u = (rx * dy1 - ry * dx1) / denom
    if -eps <= t < 1.0 - eps and -eps <= u < 1.0 - eps:
        t = min(max(t, 0.0), 1.0)
        u = min(max(u, 0.0), 1.0)
        return t, u, (p0[0] + t * dx1, p0[1] + t * dy1)
    return None


def polyline_length(pts):
    pts = np.asarray(pts, float)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def angle_between(u, v):
    """Unsigned angle between two direction vectors (any dimension)."""
    un = np.linalg.norm(u)
    vn = np.linalg.norm(v)
    if un == 0.0 or vn == 0.0:
        return 0.0
    c = np.dot(u, v) / (un * vn)
    return math.acos(min(1.0, max(-1.0, c)))


def line_crossing_angle(u, v):
    """Acute angle between two undirected lines given by direction vectors."""
    a = angle_between(u, v)
    return min(a, math.pi - a)
