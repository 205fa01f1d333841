"""Polygonal reference domain with Dirichlet/Neumann edge labels."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import shapely
from shapely.geometry import Polygon


@dataclass(frozen=True)
class DomainSpec:
    """Simple polygon; ``labels[i]`` tags the edge from vertex ``i`` to ``i+1``."""

    vertices: tuple[tuple[float, float], ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        verts = tuple(tuple(float(c) for c in v) for v in self.vertices)
        labels = tuple(str(x).upper() for x in self.labels)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "labels", labels)
        if len(verts) < 3:
            raise ValueError("domain needs at least three vertices")
        if len(labels) != len(verts):
            raise ValueError(f"expected {len(verts)} edge labels, got {len(labels)}")
        bad = [x for x in labels if x not in ("D", "N")]
        if bad:
            raise ValueError(f"edge labels must be 'D' or 'N', got {bad}")
        poly = Polygon(verts)
        if not poly.is_valid or not poly.exterior.is_simple:
            raise ValueError("domain polygon is not simple")
        if poly.exterior.is_ccw is False:
            # keep a counter-clockwise orientation so edge normals point outward
            object.__setattr__(self, "vertices", verts[::-1])
            object.__setattr__(self, "labels", labels[-2::-1] + labels[-1:])

    @classmethod
    def rectangle(cls, x0=0.0, y0=0.0, x1=1.0, y1=1.0, labels=("N", "N", "N", "N")):
        """Axis-aligned box; labels are bottom, right, top, left."""
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)), tuple(labels))

    @cached_property
    def polygon(self) -> Polygon:
        return Polygon(self.vertices)

    @property
    def edges(self) -> list[tuple[np.ndarray, np.ndarray, str]]:
        v = np.asarray(self.vertices)
        return [(v[i], v[(i + 1) % len(v)], self.labels[i]) for i in range(len(v))]

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        pts = shapely.points(np.atleast_2d(points))
        return shapely.distance(self.polygon.exterior, pts)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = shapely.points(np.atleast_2d(points))
        return shapely.covers(self.polygon.buffer(tol), pts)

    def on_labelled_edges(self, points: np.ndarray, label: str, tol: float) -> np.ndarray:
        """Mask of points within ``tol`` of an edge carrying ``label``."""
        p = np.atleast_2d(points)
        hit = np.zeros(len(p), dtype=bool)
        for a, b, lab in self.edges:
            if lab != label:
                continue
            hit |= _segment_distance(p, a, b) <= tol
        return hit


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)
