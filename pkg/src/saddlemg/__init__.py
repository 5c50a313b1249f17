"""Multigrid for constrained minimization / saddle-point systems on triangles."""

__version__ = "0.1.0"
