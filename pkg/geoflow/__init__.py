"""Level-set geometry, smeared-delta quadrature and shape-gradient flows on 3D grids."""

__all__ = [
    "__version__",
]

__version__ = "0.1.0"
