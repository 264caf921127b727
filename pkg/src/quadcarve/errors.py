"""Exception types used across the pipeline."""


class QuadcarveError(Exception):
    """Base class for all pipeline diagnostics."""


class MeshError(QuadcarveError):
    """Invalid or unsupported input mesh."""


class FieldError(QuadcarveError):
    """Cross field system assembly or solve failure."""


class TraceError(QuadcarveError):
    """Separatrix tracing contract violation."""


class LayoutError(QuadcarveError):
    """T-layout construction or validation failure."""
