import math

import numpy as np
import pytest

from quadcarve import fixtures
from quadcarve.errors import TraceError
from quadcarve.field import compute_cross_field, field_from_angle_fn
from quadcarve.mesh import Surface, TriMesh
from quadcarve.singularities import detect_singularities
from quadcarve.tracing import (
    SectorFrame,
    StreamlineStepper,
    SurfacePoint,
    Tracer,
    TraceConfig,
    _TriCache,
    hyperbola_radius,
    hyperbola_ray_points,
    interpolate_direction,
    sector_frame,
    trace_all,
)


def _constant_field_surface(nx=10, ny=3, angle=0.0):
    """Flat strip with a constant cross field at the given world angle."""
    nodes = []
    for j in range(ny + 1):
        for i in range(nx + 1):
            nodes.append((i / nx * 3.0, j / ny, 0.0))
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            c = b + (nx + 1)
            d = a + (nx + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    surf = Surface.build(TriMesh(nodes, tris))
    field = field_from_angle_fn(surf, lambda p: angle)
    return surf, field


# -- direction interpolation ---------------------------------------------


def test_interpolate_constant_field():
    surf, field = _constant_field_surface()
    cache = _TriCache(surf, field, set())
    for t in (0, 5, 11):
        beta = math.atan2(cache.X[t][1], cache.X[t][0])
        omega = -beta + 0.05  # heading near world +x, in the frame
        for bary in ([1, 0, 0], [0.2, 0.3, 0.5], [1 / 3] * 3):
            ang = interpolate_direction(cache, t, np.array(bary), omega)
            d3 = math.cos(ang) * cache.X[t] + math.sin(ang) * cache.Y[t]
            assert np.allclose(d3, [1.0, 0.0, 0.0], atol=1e-12)


def test_interpolate_linear_in_argument():
    # one flat triangle with representation arguments 0, 0.2, 0.4
    mesh = TriMesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
    surf = Surface.build(mesh)
    args = [0.0, 0.2, 0.4]
    field = field_from_angle_fn(surf, lambda p: 0.0)
    for v, a in enumerate(args):
        frame_ang = math.atan2(surf.frames.basis1[v][1],
                               surf.frames.basis1[v][0])
        field.u[v] = np.exp(1j * (a - 4.0 * frame_ang))
    cache = _TriCache(surf, field, set())
    got = interpolate_direction(cache, 0, np.array([1 / 3] * 3), 0.05)
    assert got == pytest.approx(0.2 / 4.0, abs=1e-12)


def test_interpolate_branch_rotation():
    surf, field = _constant_field_surface()
    cache = _TriCache(surf, field, set())
    bary = np.array([0.2, 0.5, 0.3])
    a0 = interpolate_direction(cache, 0, bary, 0.0)
    a1 = interpolate_direction(cache, 0, bary, math.pi / 2.0)
    assert a1 - a0 == pytest.approx(math.pi / 2.0, abs=1e-12)


def test_interpolate_rejects_singular_triangle(pentagon_surface,
                                               pentagon_field):
    sings = detect_singularities(pentagon_surface, pentagon_field)
    cache = _TriCache(pentagon_surface, pentagon_field,
                      {s.tri for s in sings})
    with pytest.raises(TraceError, match="singular"):
        interpolate_direction(cache, sings[0].tri, np.array([1 / 3] * 3), 0.0)


# -- Heun stepping -------------------------------------------------------


def test_heun_straight_line_exact():
    surf, field = _constant_field_surface()
    stepper = StreamlineStepper(surf, field)
    mesh = surf.mesh
    start = SurfacePoint(tri=0, bary=np.array([0.5, 0.3, 0.2]),
                         xyz=(0.5 * mesh.nodes[mesh.tris[0][0]]
                              + 0.3 * mesh.nodes[mesh.tris[0][1]]
                              + 0.2 * mesh.nodes[mesh.tris[0][2]]))
    y0 = start.xyz[1]
    p, heading, event = start, np.array([1.0, 0.0, 0.0]), None
    for _ in range(200):
        p, heading, event = stepper.step(p, heading, 0.02)
        assert abs(p.xyz[1] - y0) < 1e-12
        if event is not None:
            break
    assert event is not None and event[0] == "boundary"


def test_heun_circular_field_drift():
    # tangential field on a polar annulus: streamlines are circles
    surf = Surface.build(fixtures.polar_annulus(0.3, 0.7, 8, 64))
    field = field_from_angle_fn(
        surf, lambda p: math.atan2(p[1], p[0]) + math.pi / 2.0)
    stepper = StreamlineStepper(surf, field)
    r0 = 0.5
    mesh = surf.mesh
    # locate the starting triangle containing (r0, 0)
    start = None
    for t in range(mesh.n_tris):
        cache = stepper.cache
        b = cache.bary(t, cache.to2(t, np.array([r0, 0.0, 0.0])))
        if b.min() >= -1e-12:
            start = SurfacePoint(tri=t, bary=np.clip(b, 0, None) / b.sum(),
                                 xyz=np.array([r0, 0.0, 0.0]))
            break
    assert start is not None
    h = surf.mesh.mean_edge_length / 10.0
    p, heading = start, np.array([0.0, 1.0, 0.0])
    angle_acc = 0.0
    prev = math.atan2(p.xyz[1], p.xyz[0])
    for _ in range(100000):
        p, heading, event = stepper.step(p, heading, h)
        assert event is None
        cur = math.atan2(p.xyz[1], p.xyz[0])
        d = cur - prev
        if d < -math.pi:
            d += 2.0 * math.pi
        if d > math.pi:
            d -= 2.0 * math.pi
        angle_acc += d
        prev = cur
        if angle_acc >= 2.0 * math.pi:
            break
    assert angle_acc >= 2.0 * math.pi
    r_end = math.hypot(p.xyz[0], p.xyz[1])
    assert abs(r_end - r0) < 1e-3


def test_heun_step_across_edge_valid():
    surf, field = _constant_field_surface(nx=4, ny=2)
    stepper = StreamlineStepper(surf, field)
    mesh = surf.mesh
    # start near the diagonal edge of triangle 0, step across it
    t = 0
    c = mesh.nodes[mesh.tris[t]]
    start_xyz = 0.05 * c[0] + 0.9 * c[1] + 0.05 * c[2]
    start = SurfacePoint(tri=t, bary=np.array([0.05, 0.9, 0.05]),
                         xyz=start_xyz)
    p, heading, event = stepper.step(start, np.array([1.0, 0.0, 0.0]), 0.3)
    assert p.tri != t
    assert p.bary.min() >= 0.0
    assert abs(p.bary.sum() - 1.0) < 1e-12


# -- singular sector frames and hyperbola arcs ----------------------------


def test_entry_frame_on_middle_port_is_vertex():
    # d = -1: five ports; entering exactly on a port ray mid-crossing
    ports0 = 0.0
    frame = sector_frame(5, ports0, (0.0, 0.0),
                         (math.cos(2 * math.pi / 5) * 0.5,
                          math.sin(2 * math.pi / 5) * 0.5),
                         omega=2 * math.pi / 5 + math.pi / 2)
    assert frame.phi_q == pytest.approx(math.pi / 4.0)


def test_entry_frame_rho():
    r = 0.37
    frame = sector_frame(5, 0.0, (0.0, 0.0),
                         (r * math.cos(0.3), r * math.sin(0.3)), omega=1.2)
    assert frame.exponent == pytest.approx(5.0 / 8.0)
    assert frame.rho_q == pytest.approx(r ** (5.0 / 8.0))


def test_a_q_at_quarter_pi():
    frame = SectorFrame(sigma=1, anchor=0.0, lam_q=0.0, rho_q=1.0,
                        phi_q=math.pi / 4.0, center2=(0, 0), r_q=1.0,
                        exponent=5.0 / 8.0)
    assert frame.A_q == pytest.approx(0.5)


def test_radial_ordering_preserved_exactly():
    # two entries on the same ray: arcs never cross, exact at every ray
    for d in (-2, -1, 1):
        n_ports = 4 - d
        lam0 = 0.4 * (2 * math.pi / n_ports)
        for r1, r2 in [(0.2, 0.3), (0.11, 0.5)]:
            f1 = sector_frame(n_ports, 0.0, (0.0, 0.0),
                              (r1 * math.cos(lam0), r1 * math.sin(lam0)),
                              omega=lam0 + math.pi / 2)
            f2 = sector_frame(n_ports, 0.0, (0.0, 0.0),
                              (r2 * math.cos(lam0), r2 * math.sin(lam0)),
                              omega=lam0 + math.pi / 2)
            p1, phis1 = hyperbola_ray_points(f1, 32)
            p2, phis2 = hyperbola_ray_points(f2, 32)
            shared = sorted(set(phis1) & set(phis2))
            assert len(shared) > 10
            for phi in shared:
                assert hyperbola_radius(f1, phi) < hyperbola_radius(f2, phi)


def rk4_ray_radii(d, z0, lams, r0, h, max_steps=2_000_000):
    """Independent oracle: RK4 integration of z' = +-exp(i d theta / 4),
    oriented counterclockwise, reporting |z| when theta crosses each
    requested ray angle."""
    z = complex(z0)
    theta = math.atan2(z.imag, z.real) % (2 * math.pi)
    s = 1.0 if math.sin(d * theta / 4.0 - theta) > 0 else -1.0

    def vel(zz):
        th = math.atan2(zz.imag, zz.real) % (2 * math.pi)
        return s * complex(math.cos(d * th / 4.0), math.sin(d * th / 4.0))

    out = {}
    lams = sorted(lams)
    idx = 0
    while lams[idx] <= theta:
        idx += 1
        if idx == len(lams):
            return out
    prev_theta, prev_r = theta, abs(z)
    for _ in range(max_steps):
        k1 = vel(z)
        k2 = vel(z + 0.5 * h * k1)
        k3 = vel(z + 0.5 * h * k2)
        k4 = vel(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        th = math.atan2(z.imag, z.real) % (2 * math.pi)
        r = abs(z)
        while idx < len(lams) and prev_theta < lams[idx] <= th:
            w = (lams[idx] - prev_theta) / (th - prev_theta)
            out[lams[idx]] = (1 - w) * prev_r + w * r
            idx += 1
        if idx == len(lams) or r > r0:
            return out
        prev_theta, prev_r = th, r
    return out


@pytest.mark.parametrize("d", [-2, -1, 1])
def test_hyperbola_arc_matches_rk4(d):
    # coarse version of the acceptance oracle: 3 entries, step 1e-4 r0
    rng = np.random.default_rng(7 + d)
    n_ports = 4 - d
    sector = 2 * math.pi / n_ports
    r0 = 1.0
    n_rays = 32
    for _ in range(3):
        lam0 = rng.uniform(0.15, 0.85) * sector
        rq = rng.uniform(0.3, 0.8) * r0
        entry = (rq * math.cos(lam0), rq * math.sin(lam0))
        frame = sector_frame(n_ports, 0.0, (0.0, 0.0), entry,
                             omega=lam0 + math.pi / 2.0)
        assert frame.sigma == 1
        pts, phis = hyperbola_ray_points(frame, n_rays)
        lams = [phi / frame.exponent for phi in phis]
        oracle = rk4_ray_radii(d, complex(*entry), lams, r0, h=1e-4 * r0)
        checked = 0
        for phi, lam in zip(phis, lams):
            if lam not in oracle:
                continue
            r_arc = hyperbola_radius(frame, phi)
            if r_arc > r0:
                continue
            assert abs(r_arc - oracle[lam]) < 1e-3 * r0
            checked += 1
        assert checked > 5


# -- full separatrix tracing ----------------------------------------------


def test_pentagon_separatrices_exit_boundary(pentagon_surface,
                                             pentagon_field):
    sings = detect_singularities(pentagon_surface, pentagon_field)
    seps, tracer = trace_all(pentagon_surface, pentagon_field, sings)
    assert len(seps) == 5
    assert all(s.termination == "BoundaryExit" for s in seps)
    # polyline connectivity: consecutive points share the segment triangle
    for s in seps:
        assert len(s.seg_tris) == s.n_segments


def test_lshape_corner_separatrices(lshape_surface):
    field, _ = compute_cross_field(lshape_surface)
    sings = detect_singularities(lshape_surface, field)
    assert sings == []
    seps, tracer = trace_all(lshape_surface, field, sings)
    assert len(seps) == 2
    assert all(s.termination == "BoundaryExit" for s in seps)
    assert all(s.origin["kind"] == "corner" for s in seps)


def test_square_has_no_separatrices(square_surface, square_field):
    sings = detect_singularities(square_surface, square_field)
    seps, _ = trace_all(square_surface, square_field, sings)
    assert seps == []


def test_rule3_tjunction_in_singular_triangle(hemisphere_surface):
    field, _ = compute_cross_field(hemisphere_surface)
    sings = detect_singularities(hemisphere_surface, field)
    assert len(sings) == 4
    seps, tracer = trace_all(hemisphere_surface, field, sings)
    tj = [s for s in seps if s.termination == "SingularTriangleTJunction"]
    assert tj
    sing_tris = {s.tri for s in sings}
    for s in tj:
        # the cut happened inside a singular triangle
        assert s.seg_tris[-1] in sing_tris
        # anchored on the port curve it crossed
        a = s.term_anchor
        assert a["kind"] == "curve"
        target = tracer.curves[tracer.resolve_sid(a["sid"])]
        from quadcarve.tracing import _point_on_polyline
        d = _point_on_polyline(np.asarray(a["point"]), target.points3)
        assert d < 1e-6


def test_repeat_crossing_cuts_spiral():
    # inward-tilted circular field: the streamline spirals and must be
    # cut when it crosses the same curve a second time
    surf = Surface.build(fixtures.polar_annulus(0.25, 0.75, 8, 64))
    tilt = 0.25
    field = field_from_angle_fn(
        surf, lambda p: math.atan2(p[1], p[0]) + math.pi / 2.0 + tilt)
    tracer = Tracer(surf, field, [])
    sep = tracer._new_sep({"kind": "synthetic", "tag": "spiral"})
    cache = tracer.cache
    start3 = np.array([0.6, 0.0, 0.0])
    t0 = None
    for t in range(surf.mesh.n_tris):
        b = cache.bary(t, cache.to2(t, start3))
        if b.min() >= -1e-12:
            t0 = t
            break
    sep.points3.append(start3)
    from quadcarve.tracing import _Policy
    tracer._run(sep, t0, cache.to2(t0, start3), math.pi / 2.0 + tilt,
                _Policy())
    assert sep.termination == "RepeatCross"
    self_crossings = [c for c in sep.crossings if c.other == sep.sid]
    assert len(self_crossings) >= 2


def test_merge_opposite_tangential_refuses_orthogonal(pentagon_surface,
                                                      pentagon_field):
    sings = detect_singularities(pentagon_surface, pentagon_field)
    tracer = Tracer(pentagon_surface, pentagon_field, sings)
    from quadcarve.tracing import Crossing
    fake = Crossing(other=0, my_param=0.5, other_param=0.5,
                    point=np.zeros(3), kind="orthogonal",
                    angle=math.pi / 2.0, ordinal=1)
    sep = tracer._new_sep({"kind": "synthetic"})
    with pytest.raises(TraceError, match="not tangential"):
        tracer.merge_opposite_tangential(sep, fake)


def test_merge_two_misaligned_separatrices():
    # two +1/4 singularities on a disk with slightly offset connecting
    # ports: the two separatrices follow nearly the same path in
    # opposite directions and must merge into one heteroclinic curve
    surf = Surface.build(fixtures.disk(rings=14, sides=12))
    a = np.array([-0.45, 0.012])
    b = np.array([0.45, -0.012])

    def angle_fn(p):
        za = complex(p[0] - a[0], p[1] - a[1])
        zb = complex(p[0] - b[0], p[1] - b[1])
        return float(np.angle(za * zb)) / 4.0

    field = field_from_angle_fn(surf, angle_fn)
    sings = detect_singularities(surf, field)
    assert sorted(s.index4 for s in sings) == [1, 1]
    seps, tracer = trace_all(surf, field, sings)
    merged = [s for s in seps if s.termination == "MergedHeteroclinic"]
    assert merged
    m = merged[0]
    assert m.origin["kind"] == "singularity"
    assert m.origin2 is not None and m.origin2["kind"] == "singularity"
    assert m.origin["tri"] != m.origin2["tri"]
    # endpoints coincide with the two singularity locations
    locs = {s.tri: s.location for s in sings}
    assert np.linalg.norm(m.points3[0] - locs[m.origin["tri"]]) < 1e-9
    assert np.linalg.norm(m.points3[-1] - locs[m.origin2["tri"]]) < 1e-9


def test_determinism_of_tracing(pentagon_surface, pentagon_field):
    sings = detect_singularities(pentagon_surface, pentagon_field)
    seps1, _ = trace_all(pentagon_surface, pentagon_field, sings)
    seps2, _ = trace_all(pentagon_surface, pentagon_field, sings)
    assert len(seps1) == len(seps2)
    for s1, s2 in zip(seps1, seps2):
        assert s1.sid == s2.sid
        assert s1.termination == s2.termination
        assert np.array_equal(np.asarray(s1.points3),
                              np.asarray(s2.points3))
