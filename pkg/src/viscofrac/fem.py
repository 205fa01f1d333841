"""P1 triangle assembly: mass, stiffness, strains and stress loads.

All operators act on full nodal vectors of length ``2 * n_nodes`` with the
interleaved layout ``[u0x, u0y, u1x, u1y, ...]``.  Strains are constant per
element, so a single quadrature point integrates every stiffness and
memory term exactly for piecewise-constant tensors.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .material import voigt_matrix


def element_geometry(nodes: np.ndarray, tris: np.ndarray):
    """Signed areas and shape-function gradients ``(ne, 3, 2)``."""
    p = nodes[tris]
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area2 = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]
    area = 0.5 * area2
    grads = np.stack([b, c], axis=2) / area2[:, None, None]
    return area, grads


def b_matrices(grads: np.ndarray) -> np.ndarray:
    """Strain-displacement matrices ``(ne, 3, 6)`` for ``[e11, e22, 2 e12]``."""
    ne = grads.shape[0]
    B = np.zeros((ne, 3, 6))
    B[:, 0, 0::2] = grads[:, :, 0]
    B[:, 1, 1::2] = grads[:, :, 1]
    B[:, 2, 0::2] = grads[:, :, 1]
    B[:, 2, 1::2] = grads[:, :, 0]
    return B


def element_dofs(tris: np.ndarray) -> np.ndarray:
    dofs = np.empty((tris.shape[0], 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * tris
    dofs[:, 1::2] = 2 * tris + 1
    return dofs


def _assemble(dofs: np.ndarray, blocks: np.ndarray, ndof: int) -> sp.csr_matrix:
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(ndof, ndof))


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


class Assembly:
    """Element data and global operators for one mesh geometry."""

    def __init__(self, nodes: np.ndarray, tris: np.ndarray):
        self.nodes = np.asarray(nodes, dtype=float)
        self.tris = np.asarray(tris, dtype=np.int64)
        self.n_nodes = self.nodes.shape[0]
        self.ndof = 2 * self.n_nodes
        self.area, self.grads = element_geometry(self.nodes, self.tris)
        self.B = b_matrices(self.grads)
        self.dofs = element_dofs(self.tris)
        self.centroids = self.nodes[self.tris].mean(axis=1)
        self._mass = None

    @property
    def mass(self) -> sp.csr_matrix:
        """Consistent mass matrix (unit density)."""
        if self._mass is None:
            me = np.zeros((len(self.area), 6, 6))
            for k in range(2):
                me[:, k::2, k::2] = self.area[:, None, None] * _MASS_REF
            self._mass = _assemble(self.dofs, me, self.ndof)
        return self._mass

    def stiffness(self, tensors: np.ndarray) -> sp.csr_matrix:
        """Stiffness for per-element tensors ``(ne, 2, 2, 2, 2)`` or one tensor."""
        D = voigt_matrix(tensors)
        if D.ndim == 2:
            D = np.broadcast_to(D, (len(self.area), 3, 3))
        ke = self.area[:, None, None] * (self.B.transpose(0, 2, 1) @ D @ self.B)
        return _assemble(self.dofs, ke, self.ndof)

    def strain(self, u: np.ndarray) -> np.ndarray:
        """Symmetric gradient per element, ``(ne, 2, 2)``."""
        ue = np.asarray(u).reshape(-1)[self.dofs]
        ev = np.einsum("eaj,ej->ea", self.B, ue)
        E = np.empty((len(self.area), 2, 2))
        E[:, 0, 0] = ev[:, 0]
        E[:, 1, 1] = ev[:, 1]
        E[:, 0, 1] = E[:, 1, 0] = 0.5 * ev[:, 2]
        return E

    def stress_load(self, S: np.ndarray) -> np.ndarray:
        """Vector ``g`` with ``g . w = (S, Ew)`` for per-element matrices ``S``."""
        S = np.asarray(S)
        sv = np.stack([S[:, 0, 0], S[:, 1, 1], 0.5 * (S[:, 0, 1] + S[:, 1, 0])], axis=1)
        fe = np.einsum("e,eaj,ea->ej", self.area, self.B, sv)
        out = np.zeros(self.ndof)
        np.add.at(out, self.dofs.ravel(), fe.ravel())
        return out

    def pair(self, S: np.ndarray, E: np.ndarray) -> float:
        """``(S, E)`` in L2 for per-element constant matrices."""
        return float(np.einsum("e,eij,eij->", self.area, S, E))

    def body_load(self, f_nodal: np.ndarray) -> np.ndarray:
        """Load vector of the P1 interpolant of a nodal body force."""
        return self.mass @ np.asarray(f_nodal, dtype=float).reshape(-1)


def prolongation(n_nodes: int, node_to_active: np.ndarray, n_active: int) -> sp.csr_matrix:
    """Map active-node vectors to full nodal vectors (tied twins share values)."""
    rows = np.arange(2 * n_nodes)
    cols = np.empty(2 * n_nodes, dtype=np.int64)
    cols[0::2] = 2 * node_to_active
    cols[1::2] = 2 * node_to_active + 1
    return sp.csr_matrix((np.ones(2 * n_nodes), (rows, cols)), shape=(2 * n_nodes, 2 * n_active))
