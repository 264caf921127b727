"""Connection Laplacian assembly and the diffusion-generated iteration.

The representation vector u lives on mesh nodes as a unit complex number
in each node's tangent frame.  The discrete Laplacian couples neighbors
through the transport factor exp(4i phi), is normalized by one-ring
area, and drives a backward Euler step with pointwise renormalization
until the iterates stop moving.
"""

import cmath
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import FieldError
from .mesh import transport_phi

logger = logging.getLogger(__name__)


@dataclass
class DiffusionSystem:
    """Sparse backward-Euler system over the free (unconstrained) nodes.

    A is the area-normalized connection Laplacian restricted to free
    nodes; b collects the Dirichlet neighbor contributions so that the
    harmonic extension solves A u = -b.
    """
    A: sp.csr_matrix
    b: np.ndarray
    free: np.ndarray           # node ids of the free rows
    free_pos: dict             # node id -> row
    dirichlet: dict            # node id -> pinned complex value
    ring_area: np.ndarray
    n_free: int
    tau: float = 0.0
    delta: float = 0.0


@dataclass
class CrossField:
    """Unit representation vector per node, plus iteration metadata."""
    u: np.ndarray               # complex, all nodes
    dirichlet: dict
    iterations: int = 0
    converged: bool = True

    @property
    def theta(self):
        """Cross direction angle per node frame: arg(u)/4."""
        return np.angle(self.u) / 4.0

    def copy(self):
        return CrossField(u=self.u.copy(), dirichlet=self.dirichlet,
                          iterations=self.iterations,
                          converged=self.converged)


def _dirichlet_values(surface, pin=None):
    """Boundary Dirichlet data, or a single pinned cross on closed
    surfaces (lowest node id, aligned with its frame)."""
    bnd = surface.boundary
    if bnd.nodes:
        return {v: b.u for v, b in sorted(bnd.nodes.items())}
    if pin is None:
        pin = 0
    return {int(pin): 1.0 + 0.0j}


def assemble_system(surface, pin=None):
    """Build the free-node diffusion system for a prepared surface.

    Every boundary node is constrained; closed surfaces pin one cross
    instead.  Row i couples its one-ring through exp(4i phi_ji) with
    weight 1/|ring area|; Dirichlet neighbors fold into b.
    """
    mesh = surface.mesh
    dirichlet = _dirichlet_values(surface, pin=pin)
    if not dirichlet:
        raise FieldError("no constrained nodes; pin a cross on closed meshes")
    n = mesh.n_nodes
    free = np.array([v for v in range(n) if v not in dirichlet],
                    dtype=np.int64)
    free_pos = {int(v): k for k, v in enumerate(free)}
    rows, cols, vals = [], [], []
    b = np.zeros(len(free), dtype=complex)
    for k, i in enumerate(free):
        i = int(i)
        area = mesh.ring_area[i]
        w = 1.0 / area
        deg = 0
        for j in mesh.node_neighbors[i]:
            deg += 1
            # transport the neighbor value into frame i
            coeff = w * cmath.exp(4j * transport_phi(mesh, surface.transport,
                                                     j, i))
            if j in dirichlet:
                b[k] += coeff * dirichlet[j]
            else:
                rows.append(k)
                cols.append(free_pos[j])
                vals.append(coeff)
        rows.append(k)
        cols.append(k)
        vals.append(-w * deg)
    A = sp.csr_matrix((vals, (rows, cols)),
                      shape=(len(free), len(free)), dtype=complex)
    return DiffusionSystem(A=A, b=b, free=free, free_pos=free_pos,
                           dirichlet=dirichlet,
                           ring_area=mesh.ring_area[free].copy(),
                           n_free=len(free))


def estimate_time_step(system, tol=1e-3, max_iter=200):
    """tau = 1 / |lambda_1| via inverse power iteration on A.

    lambda_1 is the smallest-magnitude eigenvalue of A (all eigenvalues
    of the constrained Laplacian are negative).  Falls back to a
    quarter of the mean one-ring area with a warning if the iteration
    stalls.
    """
    n = system.n_free
    if n == 0:
        return 0.0
    fallback = float(np.mean(system.ring_area)) / 4.0
    try:
        lu = spla.splu(system.A.tocsc())
    except RuntimeError:
        logger.warning("Laplacian factorization failed; tau fallback %.3g",
                       fallback)
        return fallback
    M = system.ring_area  # A is Hermitian under this weighting
    v = np.ones(n, dtype=complex) + 1e-3 * np.linspace(0.0, 1.0, n)
    v /= np.linalg.norm(v)
    lam_prev = None
    for _ in range(max_iter):
        w = lu.solve(v)
        nw = np.linalg.norm(w)
        if not np.isfinite(nw) or nw == 0.0:
            logger.warning("inverse iteration diverged; tau fallback %.3g",
                           fallback)
            return fallback
        v = w / nw
        Av = system.A @ v
        lam = float(np.real(np.vdot(M * v, Av)) / np.real(np.vdot(M * v, v)))
        if lam_prev is not None and abs(lam - lam_prev) <= tol * abs(lam):
            break
        lam_prev = lam
    else:
        logger.warning("inverse iteration did not settle; tau fallback %.3g",
                       fallback)
        return fallback
    if lam == 0.0:
        return fallback
    return 1.0 / abs(lam)


def _full_vector(system, u_free, n_nodes):
    u = np.zeros(n_nodes, dtype=complex)
    if system.n_free:
        u[system.free] = u_free
    for v, g in system.dirichlet.items():
        u[v] = g
    return u


def _normalize(values, previous=None):
    """Pointwise renormalization; near-zero entries keep the previous
    iterate's direction (first iterate: +1)."""
    out = np.empty_like(values)
    mag = np.abs(values)
    ok = mag > 1e-14
    out[ok] = values[ok] / mag[ok]
    if not np.all(ok):
        if previous is None:
            out[~ok] = 1.0
        else:
            out[~ok] = previous[~ok]
    return out


def solve_initial(system, n_nodes):
    """Harmonic extension of the Dirichlet data, then normalized."""
    if system.n_free == 0:
        return CrossField(u=_full_vector(system, None, n_nodes),
                          dirichlet=system.dirichlet)
    try:
        lu = spla.splu(system.A.tocsc())
        u_free = lu.solve(-system.b)
    except RuntimeError as exc:
        raise FieldError(f"singular harmonic system: {exc}") from None
    if not np.all(np.isfinite(u_free)):
        raise FieldError("harmonic solve produced non-finite values "
                         "(disconnected free component?)")
    u_free = _normalize(u_free)
    return CrossField(u=_full_vector(system, u_free, n_nodes),
                      dirichlet=system.dirichlet)


def diffuse(system, field0, n_nodes, tau=None, delta_scale=1e-6,
            max_iter=10000):
    """Backward-Euler diffusion with pointwise renormalization.

    Iterates (I - tau A) u' = u + tau b, renormalizes, and stops when
    the Euclidean change drops to sqrt(2 n) * delta_scale over the free
    nodes.  One factorization is reused for every step.
    """
    if system.n_free == 0:
        return field0.copy(), system
    if tau is None:
        tau = system.tau if system.tau > 0.0 else estimate_time_step(system)
    if tau <= 0.0:
        raise FieldError(f"time step must be positive, got {tau}")
    n = system.n_free
    delta = math.sqrt(2.0 * n) * delta_scale
    system.tau = tau
    system.delta = delta
    I = sp.identity(n, dtype=complex, format="csr")
    op = spla.splu((I - tau * system.A).tocsc())
    u = field0.u[system.free].copy()
    iterations = 0
    converged = False
    while iterations < max_iter:
        u_new = op.solve(u + tau * system.b)
        u_new = _normalize(u_new, previous=u)
        iterations += 1
        change = np.linalg.norm(u_new - u)
        u = u_new
        if change <= delta:
            converged = True
            break
    if not converged:
        logger.warning("diffusion hit the %d iteration cap", max_iter)
    return CrossField(u=_full_vector(system, u, n_nodes),
                      dirichlet=system.dirichlet,
                      iterations=iterations, converged=converged), system


def dirichlet_energy(surface, field):
    """Discrete connection Dirichlet energy, diagnostic only.

    Half the sum over edges of |u_j - exp(4i phi_ij) u_i|^2.
    """
    mesh = surface.mesh
    total = 0.0
    for e in range(mesh.n_edges):
        a, b = mesh.edges[e]
        q = cmath.exp(4j * surface.transport.phi_canonical[e])
        total += abs(field.u[b] - q * field.u[a]) ** 2
    return 0.5 * total


def compute_cross_field(surface, tau=None, delta_scale=1e-6,
                        max_iter=10000, pin=None):
    """Assemble, pick the time step, and run the iteration to
    convergence.  Returns (field, system)."""
    system = assemble_system(surface, pin=pin)
    if system.n_free == 0:
        return solve_initial(system, surface.mesh.n_nodes), system
    if tau is None:
        tau = estimate_time_step(system)
    field0 = solve_initial(system, surface.mesh.n_nodes)
    return diffuse(system, field0, surface.mesh.n_nodes, tau=tau,
                   delta_scale=delta_scale, max_iter=max_iter)[0], system


def field_from_angle_fn(surface, fn):
    """Synthetic unit field from a global-plane angle function.

    fn maps a node position to a cross direction angle in the world
    x-y plane; intended for flat test meshes.
    """
    mesh = surface.mesh
    u = np.zeros(mesh.n_nodes, dtype=complex)
    for v in range(mesh.n_nodes):
        ang = fn(mesh.nodes[v])
        b1 = surface.frames.basis1[v]
        frame_ang = math.atan2(b1[1], b1[0])
        u[v] = cmath.exp(4j * (ang - frame_ang))
    return CrossField(u=u, dirichlet={})


def dump_field_csv(surface, field, path):
    """Debug CSV of per-node cross angles theta = arg(u)/4."""
    theta = field.theta
    with open(path, "w") as fh:
        fh.write("node,x,y,z,theta,re_u,im_u\n")
        for v in range(surface.mesh.n_nodes):
            p = surface.mesh.nodes[v]
            fh.write(f"{v},{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},"
                     f"{float(theta[v])!r},{float(field.u[v].real)!r},"
                     f"{float(field.u[v].imag)!r}\n")
