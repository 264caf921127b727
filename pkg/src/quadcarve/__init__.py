"""Coarse quad layout generation on triangle surfaces.

Pipeline: boundary-aligned cross field (diffusion-generated iteration),
separatrix tracing (Heun in regular triangles, conformal hyperbola
traversal in singular triangles), and greedy chord-collapse
simplification of the resulting T-layout.
"""

from .errors import (
    QuadcarveError,
    MeshError,
    FieldError,
    TraceError,
    LayoutError,
)
from .mesh import TriMesh, load_mesh, vertex_normals, build_tangent_frames
from .mesh import edge_transport_angles, classify_boundary, Surface
from .field import assemble_system, estimate_time_step, solve_initial, diffuse
from .field import dirichlet_energy, CrossField, DiffusionSystem
from .singularities import matching, triangle_index, detect_singularities, Singularity

__all__ = [
    "QuadcarveError", "MeshError", "FieldError", "TraceError", "LayoutError",
    "TriMesh", "load_mesh", "vertex_normals", "build_tangent_frames",
    "edge_transport_angles", "classify_boundary", "Surface",
    "assemble_system", "estimate_time_step", "solve_initial", "diffuse",
    "dirichlet_energy", "CrossField", "DiffusionSystem",
    "matching", "triangle_index", "detect_singularities", "Singularity",
]

__version__ = "0.1.0"
