"""Piecewise multi-view photometric stereo (C++ core)."""

from ._pmvps import (
    Error,
    bench,
    error_3d,
    integrate_gradients,
    project_manifold,
    reconstruct,
    render_scene,
    shade,
    solve_masked,
)

__all__ = [
    "Error",
    "bench",
    "error_3d",
    "integrate_gradients",
    "project_manifold",
    "reconstruct",
    "render_scene",
    "shade",
    "solve_masked",
]
