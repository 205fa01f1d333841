"""Shared scenario builders and independent oracles for the test suite."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from viscofrac.domain import DomainSpec
from viscofrac.driver import EvolutionConfig, Problem
from viscofrac.geometry import CrackPath
from viscofrac.material import MaterialModel
from viscofrac.mesh import CrackedMesh
from viscofrac.solver import HistoryData, LoadSet

MU = 0.45
OPENING_AMPLITUDE = 1.9


def unit_square(labels=("N", "N", "N", "N")) -> DomainSpec:
    return DomainSpec.rectangle(labels=labels)


def edge_crack(b: float = 0.0, r: float = 0.1, L: float = 1e4) -> CrackPath:
    """Straight crack entering the unit square from the middle of the left edge."""
    return CrackPath.straight((0.0, 0.5), (1.0, 0.0), -0.3, b, r, L)


def base_material() -> MaterialModel:
    return MaterialModel.isotropic((1.0, 1.0), (0.25, 0.5))


def opening_loads(amplitude: float = OPENING_AMPLITUDE) -> LoadSet:
    """Initial velocity pulling the two crack faces apart."""
    return LoadSet(initial_velocity=lambda x: np.column_stack(
        [np.zeros(len(x)), amplitude * np.tanh((x[:, 1] - 0.5) / 0.1)]))


def generic_loads() -> LoadSet:
    """Smooth body force, stress, bottom-edge Dirichlet data and initial velocity."""

    def F(t, x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = 0.3 * np.sin(np.pi * x[:, 1]) * np.sin(2 * t)
        out[:, 1, 1] = 0.2 * x[:, 0] * np.cos(t)
        out[:, 0, 1] = out[:, 1, 0] = 0.1 * np.sin(t) * x[:, 0] * x[:, 1]
        return out

    def F_rate(t, x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = 0.6 * np.sin(np.pi * x[:, 1]) * np.cos(2 * t)
        out[:, 1, 1] = -0.2 * x[:, 0] * np.sin(t)
        out[:, 0, 1] = out[:, 1, 0] = 0.1 * np.cos(t) * x[:, 0] * x[:, 1]
        return out

    def grip(c, w):
        return lambda t, x: np.column_stack([c * np.sin(np.pi * x[:, 0]) * w(t), np.zeros(len(x))])

    return LoadSet(
        body_force=lambda t, x: np.column_stack([np.sin(2 * np.pi * x[:, 0]) * np.cos(t),
                                                 x[:, 0] * x[:, 1] * np.sin(3 * t)]),
        stress=F, stress_rate=F_rate,
        dirichlet=grip(0.05, lambda t: np.sin(2 * t)),
        dirichlet_rate=grip(0.1, lambda t: np.cos(2 * t)),
        dirichlet_accel=grip(-0.2, lambda t: np.sin(2 * t)),
        initial_velocity=lambda x: np.column_stack([0.2 * np.sin(np.pi * x[:, 1]), 0.1 * x[:, 0]]),
    )


def generic_history() -> HistoryData:
    return HistoryData("constant", ((0.1, 0.0), (0.0, 0.05)))


def evolution_config(**kw) -> EvolutionConfig:
    base = dict(times=(0.0, 0.5, 1.0), eta=0.25, mu=MU, M=1000.0)
    base.update(kw)
    return EvolutionConfig(**base)


def quiescent_problem(**kw) -> Problem:
    return Problem(unit_square(), edge_crack(), base_material(), LoadSet(), None,
                   evolution_config(**kw))


def growth_problem(amplitude: float = OPENING_AMPLITUDE, **kw) -> Problem:
    return Problem(unit_square(), edge_crack(), base_material(), opening_loads(amplitude), None,
                   evolution_config(**kw))


def with_config(problem: Problem, **kw) -> Problem:
    return replace(problem, config=replace(problem.config, **kw))


def single_node_mesh(width: float = 1.0) -> CrackedMesh:
    """Square split into four triangles around a free centre node; the corners are clamped."""
    w = width
    nodes = np.array([[0, 0], [w, 0], [w, w], [0, w], [w / 2, w / 2]], dtype=float)
    tris = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    empty = np.zeros(0, dtype=np.int64)
    dom = DomainSpec.rectangle(0, 0, w, w, labels=("D", "D", "D", "D"))
    return CrackedMesh(nodes, tris, empty, empty, np.zeros(0), -1, np.zeros(0, dtype=bool),
                       np.arange(4), w, w, dom, None)


# ---------------------------------------------------------------------------
# Independent quadrature on P1 triangles

# Dunavant 6-point rule, exact for degree 4 (weights sum to 1)
_D6_A, _D6_B = 0.445948490915965, 0.091576213509771
_D6_WA, _D6_WB = 0.223381589678011, 0.109951743655322
DUNAVANT6 = (
    np.array([[_D6_A, _D6_A, 1 - 2 * _D6_A], [_D6_A, 1 - 2 * _D6_A, _D6_A],
              [1 - 2 * _D6_A, _D6_A, _D6_A], [_D6_B, _D6_B, 1 - 2 * _D6_B],
              [_D6_B, 1 - 2 * _D6_B, _D6_B], [1 - 2 * _D6_B, _D6_B, _D6_B]]),
    np.array([_D6_WA] * 3 + [_D6_WB] * 3),
)


def p1_gradients(p: np.ndarray):
    """Per-triangle area and basis gradients, written out from the affine map."""
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.column_stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]]) / det[:, None]
    gy = np.column_stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]]) / det[:, None]
    return 0.5 * np.abs(det), gx, gy


def l2_error(nodes, tris, u_nodal, exact) -> float:
    """``||u_h - u*||_{L2}`` with the 6-point rule; ``exact(points) -> (n, 2)``."""
    bary, w = DUNAVANT6
    p = nodes[tris]
    area = p1_gradients(p)[0]
    u = u_nodal.reshape(-1, 2)[tris]
    total = 0.0
    for lam, wq in zip(bary, w):
        xq = np.einsum("k,nkc->nc", lam, p)
        uq = np.einsum("k,nkc->nc", lam, u)
        total += wq * np.sum(area * np.sum((uq - exact(xq)) ** 2, axis=1))
    return math.sqrt(total)


def observed_orders(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])
