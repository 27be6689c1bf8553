"""Co-proper vertex sets for inner copolyblock approximation.

A copolyblock L(V) is the union of the boxes [v, M] over a finite vertex
set V inside an outcome box [m, M].  The solver shrinks the approximation
by a cutting-cone update: a vertex v is replaced by the p points obtained
by sliding one coordinate of v down to the frontier point w found on the
ray through v.  Vertices dominated from below by another vertex carry no
information and are pruned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .outcome import MpSolution, OutcomeBox

COORD_TOL = 1e-9


@dataclass(eq=False)
class Vertex:
    z: np.ndarray
    id: int
    phi: Optional[float] = None
    mp: Optional[MpSolution] = None

    @property
    def evaluated(self) -> bool:
        return self.phi is not None


class VertexSet:
    """Ordered collection of co-proper vertices with deterministic ids."""

    def __init__(self, box: OutcomeBox):
        self.box = box
        self.vertices: list[Vertex] = []
        self._next_id = 0

    def __len__(self):
        return len(self.vertices)

    def __iter__(self):
        return iter(self.vertices)

    def add(self, z) -> Optional[Vertex]:
        """Insert a vertex unless an equal one (per-coordinate 1e-9) exists;
        returns the new vertex or None on duplicate."""
        z = np.asarray(z, dtype=float).copy()
        for v in self.vertices:
            if np.all(np.abs(v.z - z) <= COORD_TOL):
                return None
        vert = Vertex(z=z, id=self._next_id)
        self._next_id += 1
        self.vertices.append(vert)
        return vert

    def remove(self, vertex: Vertex) -> None:
        self.vertices.remove(vertex)

    def pending(self) -> list:
        return [v for v in self.vertices if not v.evaluated]


def cut(vset: VertexSet, vertex: Vertex, w) -> VertexSet:
    """Replace ``vertex`` by its cutting-cone children z^i, where z^i equals
    v except coordinate i is lowered to w_i.  Children landing on the lower
    face z^i_i = m_i are filtered out: outcomes there are already covered by
    the initialization subproblems."""
    w = np.asarray(w, dtype=float)
    if vertex not in vset.vertices:
        raise ValueError("vertex not in set")
    if np.any(w > vertex.z + COORD_TOL):
        raise ValueError("cut point must satisfy w <= v componentwise")
    vset.remove(vertex)
    p = len(w)
    m = vset.box.m if vset.box is not None else np.full(p, -np.inf)
    for i in range(p):
        z = vertex.z.copy()
        z[i] = w[i]
        if abs(z[i] - m[i]) <= COORD_TOL:
            continue
        vset.add(z)
    return vset


def prune(vset: VertexSet) -> VertexSet:
    """Drop vertices dominated from below by another vertex (v' <= v,
    v' != v) and vertices whose MP turned out infeasible."""
    keep = []
    verts = vset.vertices
    for v in verts:
        if v.mp is not None and not v.mp.feasible:
            continue
        dominated = False
        for u in verts:
            if u is v:
                continue
            diff = u.z - v.z
            if np.all(diff <= COORD_TOL) and np.any(diff < -COORD_TOL):
                dominated = True
                break
        if not dominated:
            keep.append(v)
    vset.vertices = keep
    return vset


def select_min_phi(vset: VertexSet):
    """Vertex with the least cached phi (ties to the lowest id) and that
    value; raises on an empty set, which signals exhaustion upstream."""
    best = None
    for v in vset.vertices:
        if v.phi is None:
            raise ValueError(f"vertex {v.id} has no evaluated phi")
        if best is None or (v.phi, v.id) < (best.phi, best.id):
            best = v
    if best is None:
        raise ValueError("empty vertex set")
    return best, float(best.phi)
