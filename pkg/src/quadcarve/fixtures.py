"""Bundled test domains.

All generators are deterministic and produce consistently wound,
good-quality triangulations.  Planar domains lie in z = 0 with normals
pointing +z.
"""

import math

import numpy as np

from .mesh import TriMesh


def _grid_mesh(nx, ny, keep=None, scale=1.0, origin=(0.0, 0.0)):
    """Structured grid triangulation of [0,nx]x[0,ny] cells, optionally
    filtered by a cell predicate keep(i, j)."""
    used = {}
    nodes = []
    tris = []

    def node_id(i, j):
        key = (i, j)
        if key not in used:
            used[key] = len(nodes)
            nodes.append((origin[0] + i * scale, origin[1] + j * scale, 0.0))
        return used[key]

    for i in range(nx):
        for j in range(ny):
            if keep is not None and not keep(i, j):
                continue
            a = node_id(i, j)
            b = node_id(i + 1, j)
            c = node_id(i + 1, j + 1)
            d = node_id(i, j + 1)
            if (i + j) % 2 == 0:
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((a, b, d))
                tris.append((b, c, d))
    return TriMesh(np.array(nodes), np.array(tris))


def unit_square(n=8):
    """Unit square, n x n cells."""
    return _grid_mesh(n, n, scale=1.0 / n)


def l_shape(n=6):
    """L-shaped domain: [0,2]^2 minus the open upper-right unit square.

    One re-entrant corner at (1, 1)."""
    def keep(i, j):
        return not (i >= n and j >= n)
    return _grid_mesh(2 * n, 2 * n, keep=keep, scale=1.0 / n)


def square_annulus(n=9):
    """Square ring: [0,3]^2 minus the open middle square [1,2]^2.

    Euler characteristic 0; four re-entrant hole corners."""
    third = n // 3
    if n % 3:
        raise ValueError("n must be a multiple of 3")

    def keep(i, j):
        return not (third <= i < 2 * third and third <= j < 2 * third)
    return _grid_mesh(n, n, keep=keep, scale=3.0 / n)


def _polygon_disk_nodes(corners, rings):
    """Center plus concentric scaled copies of a convex polygon, ring k
    carrying k points per side."""
    m = len(corners)
    corners = np.asarray(corners, float)
    nodes = [np.array([0.0, 0.0])]
    ring_start = [None]  # ring 0 is the center
    for k in range(1, rings + 1):
        ring_start.append(len(nodes))
        scale = k / rings
        for s in range(m):
            a = corners[s] * scale
            b = corners[(s + 1) % m] * scale
            for t in range(k):
                nodes.append(a + (b - a) * (t / k))
    tris = []
    for k in range(1, rings + 1):
        cur0 = ring_start[k]
        cur_n = m * k
        if k == 1:
            for t in range(m):
                tris.append((cur0 + t, cur0 + (t + 1) % cur_n, 0))
            continue
        prev0 = ring_start[k - 1]
        prev_n = m * (k - 1)
        for s in range(m):
            for t in range(k):
                c0 = cur0 + (s * k + t) % cur_n
                c1 = cur0 + (s * k + t + 1) % cur_n
                p0 = prev0 + (s * (k - 1) + t) % prev_n
                tris.append((c0, c1, p0))
            for t in range(k - 1):
                p0 = prev0 + (s * (k - 1) + t) % prev_n
                p1 = prev0 + (s * (k - 1) + t + 1) % prev_n
                c1 = cur0 + (s * k + t + 1) % cur_n
                tris.append((p0, c1, p1))
    pts = np.column_stack([np.array(nodes), np.zeros(len(nodes))])
    return pts, np.array(tris)


def _regular_polygon(m, radius=1.0, phase=math.pi / 2.0):
    ang = phase + 2.0 * math.pi * np.arange(m) / m
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])


def equilateral_triangle(rings=12):
    """Equilateral triangle domain, structured symmetric triangulation."""
    pts, tris = _polygon_disk_nodes(_regular_polygon(3), rings)
    return TriMesh(pts, tris)


def regular_pentagon(rings=10):
    """Regular pentagon domain, structured symmetric triangulation."""
    pts, tris = _polygon_disk_nodes(_regular_polygon(5), rings)
    return TriMesh(pts, tris)


def disk(rings=12, sides=12):
    """Near-circular disk; boundary nodes all have index 0."""
    pts, tris = _polygon_disk_nodes(_regular_polygon(sides), rings)
    return TriMesh(pts, tris)


def hemisphere_patch(rings=10, sides=12, cap_angle=math.pi / 3.0):
    """Spherical cap of the unit sphere (disk topology, curved)."""
    pts, tris = _polygon_disk_nodes(_regular_polygon(sides), rings)
    r = np.linalg.norm(pts[:, :2], axis=1)
    psi = np.arctan2(pts[:, 1], pts[:, 0])
    phi_s = r * cap_angle  # planar radius -> polar angle on the sphere
    x = np.sin(phi_s) * np.cos(psi)
    y = np.sin(phi_s) * np.sin(psi)
    z = np.cos(phi_s)
    return TriMesh(np.column_stack([x, y, z]), tris)


def polar_annulus(r_in=0.3, r_out=0.7, n_r=6, n_theta=48):
    """Structured polar annulus in the plane (round hole, round rim)."""
    nodes = []
    for i in range(n_r + 1):
        r = r_in + (r_out - r_in) * i / n_r
        for j in range(n_theta):
            a = 2.0 * math.pi * j / n_theta
            nodes.append((r * math.cos(a), r * math.sin(a), 0.0))
    tris = []

    def nid(i, j):
        return i * n_theta + (j % n_theta)

    for i in range(n_r):
        for j in range(n_theta):
            a = nid(i, j)
            b = nid(i, j + 1)
            c = nid(i + 1, j + 1)
            d = nid(i + 1, j)
            tris.append((a, d, c))
            tris.append((a, c, b))
    return TriMesh(np.array(nodes), np.array(tris))


def icosphere(subdiv=2):
    """Closed genus-0 surface: subdivided icosahedron on the unit sphere."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdiv):
        cache = {}
        new_faces = []
        vlist = list(verts)

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                p = np.array(vlist[i]) + np.array(vlist[j])
                p /= np.linalg.norm(p)
                cache[key] = len(vlist)
                vlist.append(tuple(p))
            return cache[key]

        for (a, b, c) in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc),
                          (ab, bc, ca)]
        verts, faces = vlist, new_faces
    return TriMesh(np.array(verts), np.array(faces))


def icosahedron():
    return icosphere(subdiv=0)


FIXTURES = {
    "square": unit_square,
    "triangle": equilateral_triangle,
    "pentagon": regular_pentagon,
    "lshape": l_shape,
    "annulus": square_annulus,
    "hemisphere": hemisphere_patch,
}


def bundled(name, **kw):
    try:
        return FIXTURES[name](**kw)
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; have {sorted(FIXTURES)}")
