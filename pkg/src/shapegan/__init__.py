"""Shape-preserving attribute transfer on procedural shape images.

Subpackages are imported lazily by callers; this module stays import-light so
the CLI can cap BLAS thread counts before numpy loads.
"""

__version__ = "0.1.0"
