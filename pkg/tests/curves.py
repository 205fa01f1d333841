"""Randomized crack curves with analytic curvature, for validator oracles.

Each curve starts at the middle of the left edge of the unit square, runs
straight to arc 0 and then follows a curvature law ``kappa(s)`` whose
derivatives are known in closed form.  For a unit-speed plane curve

    |gamma'''|^2  = kappa'^2 + kappa^4
    |gamma''''|^2 = (kappa'' - kappa^3)^2 + 9 kappa^2 kappa'^2

which gives budgets ``L`` independent of the validator's finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from viscofrac.geometry import CrackPath

A0 = -0.3
R = 0.05
DS = R / 32


@dataclass
class Law:
    """Curvature ``kappa``, ``kappa'`` and ``kappa''`` on arcs ``>= 0`` (zero before)."""

    k: callable
    k1: callable
    k2: callable

    def third_derivative_bounds(self, b: float, n: int = 20001) -> tuple[float, float]:
        s = np.linspace(0.0, b, n)
        k, k1, k2 = self.k(s), self.k1(s), self.k2(s)
        mag = np.sqrt(k1**2 + k**4)
        lip = np.sqrt((k2 - k**3) ** 2 + 9 * k**2 * k1**2)
        return float(mag.max()), float(lip.max())


def cosine_law(amp: float, period: float) -> Law:
    w = 2 * math.pi / period
    return Law(lambda s: np.where(s > 0, 0.5 * amp * (1 - np.cos(w * s)), 0.0),
               lambda s: np.where(s > 0, 0.5 * amp * w * np.sin(w * s), 0.0),
               lambda s: np.where(s > 0, 0.5 * amp * w * w * np.cos(w * s), 0.0))


def plateau_law(peak: float, start: float, width: float) -> Law:
    """Curvature rising from 0 to ``peak`` by a quintic smoothstep over ``[start, start + width]``."""
    def x(s):
        return np.clip((s - start) / width, 0.0, 1.0)

    return Law(lambda s: peak * x(s) ** 3 * (10 - 15 * x(s) + 6 * x(s) ** 2),
               lambda s: peak * 30 * x(s) ** 2 * (1 - x(s)) ** 2 / width,
               lambda s: peak * 60 * x(s) * (1 - x(s)) * (1 - 2 * x(s)) / width**2)


def build(law: Law, b: float, L: float, theta: float = 0.0, ds: float = DS) -> CrackPath:
    return CrackPath.from_curvature((0.0, 0.5), (math.cos(theta), math.sin(theta)), A0, b, R, L,
                                    law.k, ds=ds)


def admissible(rng, ds: float = DS) -> tuple[CrackPath, Law, float]:
    """Gently curved path passing every condition, with a generous ``L``."""
    b = rng.uniform(0.12, 0.3)
    law = cosine_law(rng.uniform(-6.0, 6.0), rng.uniform(0.1, 0.3))
    mag, lip = law.third_derivative_bounds(b)
    L = 2.0 * max(mag, lip, 1.0)
    return build(law, b, L, ds=ds), law, b


def violating(condition: str, rng, ds: float = DS) -> CrackPath:
    """A path violating exactly ``condition``, one of unit_speed, tangent_disks,
    clearance, third_derivative."""
    if condition == "unit_speed":
        path, _, _ = admissible(rng, ds)
        stretch = 1.0 + rng.uniform(2e-3, 5e-2)
        return CrackPath(path.arcs * stretch, path.points, path.r, path.L)
    if condition == "tangent_disks":
        peak = rng.uniform(1.3, 3.0) / R
        start, width = rng.uniform(0.0, 0.05), rng.uniform(0.03, 0.06)
        law = plateau_law(peak, start, width)
        b = start + width + rng.uniform(0.4, 0.8) * math.pi / peak
        mag, lip = law.third_derivative_bounds(b)
        return build(law, b, 2.0 * max(mag, lip), ds=ds)
    if condition == "clearance":
        theta = rng.uniform(-0.3, 0.3)
        gap = rng.uniform(0.1, 0.9) * 2 * R
        # straight segment from the mouth until its distance to x = 1 is gap
        b = (1.0 - gap) / math.cos(theta) + A0
        return build(cosine_law(0.0, 1.0), b, 1.0, theta=theta, ds=ds)
    if condition == "third_derivative":
        path, law, b = admissible(rng, ds)
        while law.third_derivative_bounds(b)[0] < 1.0:
            path, law, b = admissible(rng, ds)
        mag, _ = law.third_derivative_bounds(b)
        return path.with_budget(path.r, rng.uniform(0.3, 0.8) * mag)
    raise ValueError(condition)


CONDITIONS = ("unit_speed", "tangent_disks", "clearance", "third_derivative")
