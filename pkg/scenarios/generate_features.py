"""Regenerate the feature files used by the example scenarios.

    python scenarios/generate_features.py
"""

import math
from pathlib import Path

import numpy as np

from aniso_mfpt import env, fileio

HERE = Path(__file__).parent
SQUARE = (-1.0, 1.0, -1.0, 1.0)


def write(name: str, segs: env.SegmentSet) -> None:
    (HERE / name).write_text(fileio.segments_csv(segs))


def landscape_raster(n: int = 160) -> np.ndarray:
    """Synthetic landscape: a few long straight cut lines and a dog-leg track on a 0-255 raster."""
    grid = env.GridSpec(n, n, (0.0, 1.0, 0.0, 1.0))
    lines = env.SegmentSet([
        ((0.0, 0.18), (1.0, 0.42)),
        ((0.0, 0.80), (1.0, 0.70)),
        ((0.30, 0.0), (0.38, 1.0)),
        ((0.62, 0.0), (0.88, 0.55)),
        ((0.88, 0.55), (0.70, 1.0)),
    ])
    mask = env.rasterize_segments(grid, lines, half_width=0.6 / (n - 1))
    return env.field_to_raster(np.where(mask, 255, 0).astype(np.uint8))


if __name__ == "__main__":
    write("lines_vertical.csv", env.SegmentSet([((0.0, -1.0), (0.0, 1.0))]))
    write("lines_slant.csv", env.SegmentSet([env.chord((0.0, 0.0), math.pi / 3, SQUARE)]))
    write("lines_three.csv", env.SegmentSet([((x, -1.0), (x, 1.0)) for x in (-0.5, 0.0, 0.5)]))
    write("lines_ten.csv", env.random_chords(10, SQUARE, np.random.default_rng(0)))
    (HERE / "no_features.csv").write_text("x1a,x2a,x1b,x2b\n")
    (HERE / "landscape.pgm").write_bytes(fileio.pgm_bytes(landscape_raster()))
