"""Crack paths, crack-length profiles and local tip motions.

A crack path is stored as uniform arc-length samples ``gamma(arc)`` on
``[a0, b]`` with ``gamma(a0)`` on the outer boundary.  Derivatives come from
seven-point finite-difference stencils (one-sided near the ends), and
evaluation between samples uses a quintic interpolating spline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import make_interp_spline
from shapely.geometry import Polygon

from .domain import DomainSpec

_EPS = np.finfo(float).eps
TRANSVERSAL_HALF_ANGLE = math.radians(30.0)


def smoothstep(tau):
    """Quintic smoothstep ``10 t^3 - 15 t^4 + 6 t^5`` clamped to ``[0, 1]``."""
    t = np.clip(tau, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def _bump(tau):
    """``30 t^2 (1 - t)^2`` on ``[0, 1]``: unit integral, zero outside."""
    t = np.clip(tau, 0.0, 1.0)
    return 30.0 * t**2 * (1.0 - t) ** 2


def fd_weights(offsets: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at offset 0."""
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    V = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def uniform_derivatives(values: np.ndarray, spacing: float, max_order: int = 3,
                        width: int = 7) -> list[np.ndarray]:
    """Derivatives of uniformly sampled data, orders ``1..max_order``."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    w = min(width, n)
    out = [np.empty_like(values) for _ in range(max_order)]
    half = w // 2
    for i in range(n):
        j0 = min(max(i - half, 0), n - w)
        offs = np.arange(j0, j0 + w) - i
        block = values[j0:j0 + w]
        for k in range(1, max_order + 1):
            wts = _cached_weights(tuple(offs), k)
            out[k - 1][i] = np.tensordot(wts, block, axes=1) / spacing**k
    return out


_WEIGHT_CACHE: dict = {}


def _cached_weights(offsets: tuple, order: int) -> np.ndarray:
    key = (offsets, order)
    if key not in _WEIGHT_CACHE:
        _WEIGHT_CACHE[key] = fd_weights(np.array(offsets), order)
    return _WEIGHT_CACHE[key]


# ---------------------------------------------------------------------------
# Crack paths


@dataclass(frozen=True, eq=False)
class CrackPath:
    """Uniformly sampled arc-length curve with regularity budget ``(r, L)``."""

    arcs: np.ndarray
    points: np.ndarray
    r: float
    L: float

    def __post_init__(self):
        arcs = np.asarray(self.arcs, dtype=float)
        pts = np.asarray(self.points, dtype=float)
        if arcs.ndim != 1 or pts.shape != (len(arcs), 2):
            raise ValueError("arcs must be (N,) and points (N, 2)")
        if len(arcs) < 4:
            raise ValueError(f"a crack path needs at least 4 samples, got {len(arcs)}")
        if np.any(np.diff(arcs) <= 0):
            raise ValueError("arc lengths must be strictly increasing")
        if not self.r > 0 or not self.L > 0:
            raise ValueError("r and L must be positive")
        object.__setattr__(self, "arcs", arcs)
        object.__setattr__(self, "points", pts)

    @property
    def a0(self) -> float:
        return float(self.arcs[0])

    @property
    def b(self) -> float:
        return float(self.arcs[-1])

    @property
    def ds(self) -> float:
        return float((self.arcs[-1] - self.arcs[0]) / (len(self.arcs) - 1))

    @property
    def is_uniform(self) -> bool:
        d = np.diff(self.arcs)
        return bool(np.max(np.abs(d - self.ds)) <= 1e-9 * self.ds)

    @cached_property
    def derivatives(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(uniform_derivatives(self.points, self.ds, 3))

    @cached_property
    def curvature(self) -> np.ndarray:
        d1, d2, _ = self.derivatives
        return d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]

    @cached_property
    def _spline(self):
        return make_interp_spline(self.arcs, self.points, k=min(5, len(self.arcs) - 1))

    def point(self, s, nu: int = 0) -> np.ndarray:
        return self._spline(np.asarray(s, dtype=float), nu=nu)

    def tangent(self, s) -> np.ndarray:
        d = self.point(s, 1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def normal(self, s) -> np.ndarray:
        t = self.tangent(s)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def grid_index(self, s: float, side: str = "ceil") -> int:
        x = (s - self.a0) / self.ds
        k = math.ceil(x - 1e-9) if side == "ceil" else math.floor(x + 1e-9)
        return int(min(max(k, 0), len(self.arcs) - 1))

    def truncate(self, b_new: float) -> "CrackPath":
        """Samples with arc ``<= b_new`` (``b_new`` rounded up to the grid)."""
        k = self.grid_index(b_new, "ceil")
        return CrackPath(self.arcs[:k + 1], self.points[:k + 1], self.r, self.L)

    def with_budget(self, r: float, L: float) -> "CrackPath":
        return CrackPath(self.arcs, self.points, r, L)

    @classmethod
    def straight(cls, mouth: Sequence[float], direction: Sequence[float], a0: float, b: float,
                 r: float, L: float, ds: float | None = None) -> "CrackPath":
        """Segment starting at ``mouth`` (arc ``a0``) and ending at arc ``b``."""
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        ds = default_spacing(a0, r) if ds is None else ds
        n = max(int(round((b - a0) / ds)), 6)
        arcs = a0 + ds * np.arange(n + 1) if abs(n * ds - (b - a0)) < 1e-9 * ds \
            else np.linspace(a0, b, n + 1)
        arcs[-1] = b
        pts = np.asarray(mouth, dtype=float) + (arcs - a0)[:, None] * d
        return cls(arcs, pts, r, L)

    @classmethod
    def from_curvature(cls, mouth, direction, a0: float, b: float, r: float, L: float,
                       kappa, ds: float | None = None) -> "CrackPath":
        """Integrate a curvature law ``kappa(arc)`` from the mouth."""
        ds = default_spacing(a0, r) if ds is None else ds
        n = max(int(round((b - a0) / ds)), 6)
        arcs = np.linspace(a0, b, n + 1)
        theta0 = math.atan2(direction[1], direction[0])
        pts = _integrate_curve(np.asarray(mouth, float), theta0, arcs, kappa)
        return cls(arcs, pts, r, L)


def default_spacing(a0: float, r: float) -> float:
    """Largest spacing ``<= r/32`` that puts arc 0 on the sample grid."""
    n = math.ceil(abs(a0) / (r / 32.0) - 1e-9)
    return abs(a0) / n


def _integrate_curve(start: np.ndarray, theta0: float, arcs: np.ndarray, kappa) -> np.ndarray:
    """Positions of the unit-speed curve with turning rate ``kappa``."""
    if len(arcs) == 1:
        return start[None, :].copy()

    def rhs(s, y):
        return [math.cos(y[2]), math.sin(y[2]), float(kappa(s))]

    sol = solve_ivp(rhs, (arcs[0], arcs[-1]), [start[0], start[1], theta0], method="DOP853",
                    t_eval=arcs, rtol=1e-12, atol=1e-14, max_step=(arcs[1] - arcs[0]) * 4)
    if not sol.success:
        raise RuntimeError(f"curve integration failed: {sol.message}")
    out = sol.y[:2].T.copy()
    out[0] = start
    return out


# ---------------------------------------------------------------------------
# Validation reports


@dataclass
class Check:
    passed: bool
    worst: float = 0.0
    detail: str = ""


@dataclass
class ValidationReport:
    checks: dict[str, Check] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def failed(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def summary(self) -> str:
        parts = []
        for name, c in self.checks.items():
            parts.append(f"{name}={'ok' if c.passed else 'FAIL'}"
                         + (f" ({c.detail})" if c.detail and not c.passed else ""))
        return ", ".join(parts)


def _segments_intersect(P: np.ndarray, Q: np.ndarray, R: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Proper or touching intersection of segments PQ and RS (broadcast)."""
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - \
               (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    d1 = orient(R, S, P)
    d2 = orient(R, S, Q)
    d3 = orient(P, Q, R)
    d4 = orient(P, Q, S)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0)


def find_self_intersection(points: np.ndarray) -> tuple[int, int] | None:
    """First pair of non-adjacent intersecting segments, or ``None``."""
    P, Q = points[:-1], points[1:]
    m = len(P)
    lo = np.minimum(P, Q)
    hi = np.maximum(P, Q)
    for i in range(m - 2):
        j = np.arange(i + 2, m)
        box = np.all(lo[j] <= hi[i], axis=1) & np.all(hi[j] >= lo[i], axis=1)
        j = j[box]
        if len(j) == 0:
            continue
        hit = _segments_intersect(P[i], Q[i], P[j], Q[j])
        if np.any(hit):
            return i, int(j[np.argmax(hit)])
    return None


def validate_path(path: CrackPath, domain: DomainSpec, initial: CrackPath | None = None,
                  speed_tol: float = 1e-4, match_tol: float = 1e-8,
                  check_transversal: bool = True) -> ValidationReport:
    """Check admissibility of a sampled crack path.

    Conditions: ``initial`` (agreement with the initial curve on arcs <= 0),
    ``unit_speed``, ``tangent_disks``, ``clearance`` (distance 2r from the
    boundary for arcs >= 0), ``third_derivative`` (bound and Lipschitz bound
    L), ``simple`` and ``transversal`` (mouth meets the boundary inside a
    30-degree isosceles wedge contained in the domain).
    """
    if len(path.arcs) < 4:
        raise ValueError("path needs at least 4 samples")
    rep = ValidationReport()
    arcs, pts, r, L = path.arcs, path.points, path.r, path.L
    ds = path.ds
    d1, d2, d3 = path.derivatives
    scale = max(1.0, float(np.max(np.abs(pts))))

    # (a) agreement with the initial curve
    if initial is not None:
        mask = arcs <= 1e-12
        if np.any(mask):
            ref = initial.point(np.clip(arcs[mask], initial.a0, initial.b))
            dev = float(np.max(np.linalg.norm(ref - pts[mask], axis=1)))
        else:
            dev = 0.0
        ok = dev <= match_tol * scale and abs(path.a0 - initial.a0) <= 1e-12 * scale
        rep.checks["initial"] = Check(ok, dev, f"max deviation {dev:.3e}")

    # (b) unit speed
    speed_dev = float(np.max(np.abs(np.linalg.norm(d1, axis=1) - 1.0)))
    rep.checks["unit_speed"] = Check(speed_dev <= speed_tol, speed_dev,
                                     f"max ||gamma'| - 1| = {speed_dev:.3e}")

    # (c) tangent disks: no sample strictly inside either disk of radius r
    tang = d1 / np.linalg.norm(d1, axis=1, keepdims=True)
    nrm = np.stack([-tang[:, 1], tang[:, 0]], axis=1)
    tol_disk = ds**2 / r
    worst_depth, worst_at = 0.0, None
    chunk = 256
    for sign in (1.0, -1.0):
        centers = pts + sign * r * nrm
        for c0 in range(0, len(pts), chunk):
            cc = centers[c0:c0 + chunk]
            dist = np.linalg.norm(cc[:, None, :] - pts[None, :, :], axis=2)
            depth = r - dist
            idx = np.unravel_index(np.argmax(depth), depth.shape)
            if depth[idx] > worst_depth:
                worst_depth = float(depth[idx])
                worst_at = (float(arcs[c0 + idx[0]]), float(arcs[idx[1]]))
    ok = worst_depth <= tol_disk
    detail = "" if worst_at is None else \
        f"sample at arc {worst_at[1]:.6g} is {worst_depth:.3e} inside a disk at arc {worst_at[0]:.6g}"
    rep.checks["tangent_disks"] = Check(ok, worst_depth, detail)

    # (d) clearance from the outer boundary
    grown = arcs >= -1e-12
    if np.any(grown):
        dist = domain.boundary_distance(pts[grown])
        inside = domain.contains(pts[grown])
        gap = float(np.min(np.where(inside, dist, -dist)))
    else:
        gap = np.inf
    rep.checks["clearance"] = Check(gap >= 2 * r - 1e-12, max(0.0, 2 * r - gap),
                                    f"min distance {gap:.4g} < 2r = {2 * r:.4g}")

    # (e) third derivative bound and Lipschitz bound
    mag3 = np.linalg.norm(d3, axis=1)
    lip3 = np.linalg.norm(np.diff(d3, axis=0), axis=1) / ds
    atol3 = 1e3 * _EPS * scale / ds**3
    atol_lip = 1e3 * _EPS * scale / ds**4
    bad_mag = float(np.max(mag3) - L)
    bad_lip = float(np.max(lip3) - L) if len(lip3) else -np.inf
    ok = bad_mag <= 1e-9 * L + atol3 and bad_lip <= 1e-9 * L + atol_lip
    rep.checks["third_derivative"] = Check(
        ok, max(bad_mag, bad_lip, 0.0),
        f"max|gamma'''| = {np.max(mag3):.4g}, max Lipschitz ratio = "
        f"{np.max(lip3) if len(lip3) else 0.0:.4g}, L = {L:.4g}")

    # simple curve
    pair = find_self_intersection(pts)
    rep.checks["simple"] = Check(pair is None, 0.0 if pair is None else 1.0,
                                 "" if pair is None else f"segments {pair[0]} and {pair[1]} intersect")

    if check_transversal:
        ok, detail = mouth_transversal(path, domain)
        rep.checks["transversal"] = Check(ok, 0.0 if ok else 1.0, detail)
    return rep


def mouth_transversal(path: CrackPath, domain: DomainSpec,
                      half_angle: float = TRANSVERSAL_HALF_ANGLE) -> tuple[bool, str]:
    """Isosceles wedge with apex at the mouth along the initial tangent lies in the domain."""
    p0 = path.points[0]
    if domain.boundary_distance(p0[None, :])[0] > 1e-9:
        return False, "mouth point is not on the boundary"
    t = path.derivatives[0][0]
    t = t / np.linalg.norm(t)
    height = min(abs(path.a0), 2.0 * path.r)
    w = height * math.tan(half_angle)
    n = np.array([-t[1], t[0]])
    tri = Polygon([p0, p0 + height * t + w * n, p0 + height * t - w * n])
    ok = domain.polygon.buffer(1e-9).covers(tri)
    return bool(ok), "" if ok else "mouth wedge leaves the domain"


# ---------------------------------------------------------------------------
# Path extension and kinked continuations


def _end_curvature(path: CrackPath) -> tuple[float, float, float]:
    d1, d2, d3 = path.derivatives
    t = d1[-1] / np.linalg.norm(d1[-1])
    kappa = float(t[0] * d2[-1, 1] - t[1] * d2[-1, 0])
    dkappa = float(t[0] * d3[-1, 1] - t[1] * d3[-1, 0])
    return kappa, dkappa, math.atan2(t[1], t[0])


def _resample(arcs: np.ndarray, pts: np.ndarray, a0: float, b: float, ds_target: float):
    n = max(int(round((b - a0) / ds_target)), 6)
    new_arcs = np.linspace(a0, b, n + 1)
    spl = make_interp_spline(arcs, pts, k=5)
    new_pts = spl(new_arcs)
    new_pts[0] = pts[0]
    return new_arcs, new_pts


def _append(path: CrackPath, start_index: int, b_new: float, kappa, r: float, L: float):
    """Keep samples up to ``start_index`` and integrate ``kappa`` (relative arc) beyond."""
    ds = path.ds
    s_start = float(path.arcs[start_index])
    m = (b_new - s_start) / ds
    steps = int(round(m))
    aligned = abs(m - steps) <= 1e-7 and steps >= 1
    if not aligned:
        steps = int(math.ceil(m)) + 2
    tail_arcs = s_start + ds * np.arange(steps + 1)
    if aligned:
        tail_arcs[-1] = b_new
    d1 = path.derivatives[0][start_index]
    theta0 = math.atan2(d1[1], d1[0])
    tail = _integrate_curve(path.points[start_index], theta0, tail_arcs - s_start,
                            lambda x: kappa(x))
    arcs = np.concatenate([path.arcs[:start_index], tail_arcs])
    pts = np.concatenate([path.points[:start_index], tail])
    if not aligned:
        arcs, pts = _resample(arcs, pts, path.a0, b_new, ds)
    return CrackPath(arcs, pts, r, L)


def extension_constants(r: float, L: float) -> tuple[float, float]:
    """Budget of extended paths: half the disk radius, twice the derivative bound."""
    return 0.5 * r, 2.0 * L


def extend_path(path: CrackPath, domain: DomainSpec | None = None) -> CrackPath:
    """Continue the path by ``r_hat`` past its end with clamped curvature.

    The curvature continues its first-order Taylor expansion at the end,
    flattened so its slope vanishes at the new end, and its excursion is
    saturated with ``tanh`` so ``|kappa| < 0.9 / r_hat``.  The result carries
    the budget ``(r_hat, L_hat)``.
    """
    r_hat, L_hat = extension_constants(path.r, path.L)
    k_b, dk_b, _ = _end_curvature(path)
    room = max(0.9 / r_hat - abs(k_b), 1e-12)

    def kappa(x):
        delta = dk_b * (x - x * x / (2.0 * r_hat))
        return k_b + room * math.tanh(delta / room)

    out = _append(path, len(path.arcs) - 1, path.b + r_hat, kappa, r_hat, L_hat)
    if domain is not None:
        tail = out.arcs > path.b + 1e-12
        dist = domain.boundary_distance(out.points[tail])
        inside = domain.contains(out.points[tail])
        gap = np.where(inside, dist, -dist)
        bad = np.nonzero(gap < 2 * r_hat - 1e-12)[0]
        if len(bad):
            s_bad = float(out.arcs[tail][bad[0]])
            raise ValueError(f"extension violates boundary clearance {2 * r_hat:.4g} at arc {s_bad:.6g}")
    return out


def blend_length(angle: float, r: float, L: float, rho: float, ds: float) -> float:
    """Arc length over which a kink of ``angle`` radians is turned smoothly.

    Long enough that the peak curvature stays below ``1/r`` and ``1/(4 rho)``
    and that the third derivative and its Lipschitz constant stay below ``L``.
    """
    a = abs(angle)
    return max(1.1 * 1.875 * a * r,
               1.875 * a * 4.0 * rho,
               1.1 * math.sqrt(6.0 * a / L),
               1.1 * (60.0 * a / L) ** (1.0 / 3.0),
               4.0 * ds)


def turn_path(path: CrackPath, s_now: float, angle: float, b_new: float, rho: float) -> CrackPath:
    """Continuation from the first grid point at or after ``s_now`` turning by ``angle``.

    The current curvature is tapered to zero while a smooth bump of total
    turning ``angle`` is added; both act over the same blend length.
    """
    k = path.grid_index(s_now, "ceil")
    d1, d2, d3 = path.derivatives
    t = d1[k] / np.linalg.norm(d1[k])
    k0 = float(t[0] * d2[k, 1] - t[1] * d2[k, 0])
    dk0 = float(t[0] * d3[k, 1] - t[1] * d3[k, 0])
    lb = blend_length(angle, path.r, path.L, rho, path.ds)

    def kappa(x):
        tau = x / lb
        return (k0 + dk0 * x) * (1.0 - float(smoothstep(tau))) + angle / lb * float(_bump(tau))

    b_new = max(b_new, float(path.arcs[k]) + path.ds)
    return _append(path, k, b_new, kappa, path.r, path.L)


# ---------------------------------------------------------------------------
# Length profiles


@dataclass(frozen=True)
class ProfilePiece:
    """One smooth piece: ``constant``, ``linear`` (speed) or ``smoothstep`` (increment)."""

    kind: str
    t0: float
    t1: float
    s0: float
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "smoothstep"):
            raise ValueError(f"unknown profile family {self.kind!r}")
        if not self.t1 > self.t0:
            raise ValueError("profile piece needs t1 > t0")

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    @property
    def increment(self) -> float:
        if self.kind == "linear":
            return self.param * self.duration
        if self.kind == "smoothstep":
            return self.param
        return 0.0

    @property
    def s1(self) -> float:
        return self.s0 + self.increment

    def derivative(self, t, order: int = 0):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.s0) if order == 0 else np.zeros_like(t)
        if self.kind == "linear":
            if order == 0:
                return self.s0 + self.param * (t - self.t0)
            return np.full_like(t, self.param) if order == 1 else np.zeros_like(t)
        T = self.duration
        x = np.clip((t - self.t0) / T, 0.0, 1.0)
        poly = {
            0: x**3 * (10 - 15 * x + 6 * x**2),
            1: 30 * x**2 * (1 - x) ** 2,
            2: 60 * x * (1 - x) * (1 - 2 * x),
            3: 60 - 360 * x + 360 * x**2,
            4: -360 + 720 * x,
        }[order]
        base = self.s0 if order == 0 else 0.0
        return base + self.param * poly / T**order

    def bounds(self) -> dict[str, float]:
        """Closed-form maxima of the speed, |s''|, |s'''| and the Lipschitz constant of s'''."""
        if self.kind == "constant":
            return {"min_speed": 0.0, "max_speed": 0.0, "acc": 0.0, "jerk": 0.0, "jerk_lip": 0.0}
        if self.kind == "linear":
            return {"min_speed": self.param, "max_speed": self.param, "acc": 0.0, "jerk": 0.0,
                    "jerk_lip": 0.0}
        T, d = self.duration, self.param
        return {"min_speed": 0.0 if d >= 0 else 1.875 * d / T,
                "max_speed": 1.875 * d / T if d >= 0 else 0.0,
                "acc": 10.0 / math.sqrt(3.0) * abs(d) / T**2,
                "jerk": 60.0 * abs(d) / T**3,
                "jerk_lip": 360.0 * abs(d) / T**4}


@dataclass(frozen=True)
class LengthProfile:
    """Continuous piecewise crack length ``s(t)`` with bounds ``mu`` and ``M``."""

    pieces: tuple[ProfilePiece, ...]
    mu: float
    M: float

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces:
            raise ValueError("profile needs at least one piece")
        for a, b in zip(self.pieces, self.pieces[1:]):
            if abs(a.t1 - b.t0) > 1e-12 * max(1.0, abs(a.t1)):
                raise ValueError(f"profile pieces are not contiguous at t = {a.t1}")

    @property
    def T0(self) -> float:
        return self.pieces[0].t0

    @property
    def T1(self) -> float:
        return self.pieces[-1].t1

    @property
    def breaks(self) -> np.ndarray:
        return np.array([p.t0 for p in self.pieces] + [self.T1])

    @classmethod
    def constant(cls, s0, T0, T1, mu, M):
        return cls((ProfilePiece("constant", T0, T1, s0),), mu, M)

    @classmethod
    def linear(cls, s0, speed, T0, T1, mu, M):
        return cls((ProfilePiece("linear", T0, T1, s0, speed),), mu, M)

    @classmethod
    def ramp(cls, s0, increment, T0, T1, mu, M):
        return cls((ProfilePiece("smoothstep", T0, T1, s0, increment),), mu, M)

    def _piece_index(self, t: np.ndarray) -> np.ndarray:
        starts = np.array([p.t0 for p in self.pieces])
        return np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(self.pieces) - 1)

    def derivative(self, t, order: int = 0):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t)
        idx = self._piece_index(flat)
        out = np.empty_like(flat)
        for i, piece in enumerate(self.pieces):
            m = idx == i
            if np.any(m):
                out[m] = piece.derivative(flat[m], order)
        return out.reshape(t.shape) if t.ndim else float(out[0])

    def __call__(self, t):
        return self.derivative(t, 0)

    def sing(self, jumps_only: bool = False, tol: float = 1e-12) -> tuple[float, ...]:
        """Endpoints plus the junctions between pieces.

        With ``jumps_only`` a junction counts only if a derivative of order
        1-3 jumps there.
        """
        out = [self.T0]
        for a, b in zip(self.pieces, self.pieces[1:]):
            t = a.t1
            jumps = [abs(float(a.derivative(t, k)) - float(b.derivative(t, k))) for k in (1, 2, 3)]
            if not jumps_only or max(jumps) > tol * max(1.0, self.M):
                out.append(t)
        out.append(self.T1)
        return tuple(out)

    def then(self, other: "LengthProfile") -> "LengthProfile":
        """Concatenation with a profile starting where this one ends."""
        if abs(other.T0 - self.T1) > 1e-12 * max(1.0, abs(self.T1)):
            raise ValueError("profiles are not adjacent in time")
        if abs(other(other.T0) - self(self.T1)) > 1e-12:
            raise ValueError("concatenated profile would be discontinuous")
        return LengthProfile(self.pieces + other.pieces, self.mu, self.M)

    def restrict(self, t0: float, t1: float) -> "LengthProfile":
        """Pieces overlapping ``[t0, t1]`` with the outer ones cut to the window."""
        keep = []
        for p in self.pieces:
            if p.t1 <= t0 + 1e-14 or p.t0 >= t1 - 1e-14:
                continue
            if p.kind == "smoothstep" and (p.t0 < t0 - 1e-14 or p.t1 > t1 + 1e-14):
                raise ValueError("cannot cut a smoothstep piece")
            a, b = max(p.t0, t0), min(p.t1, t1)
            keep.append(ProfilePiece(p.kind, a, b, float(p.derivative(a)), p.param))
        return LengthProfile(tuple(keep), self.mu, self.M)


def validate_profile(profile: LengthProfile, tol: float = 1e-12) -> ValidationReport:
    """Closed-form check of the speed and higher-derivative bounds per piece."""
    if not profile.T1 > profile.T0:
        raise ValueError("profile needs T0 < T1")
    rep = ValidationReport()
    mu, M = profile.mu, profile.M
    worst = {"speed": 0.0, "monotone": 0.0, "acc": 0.0, "jerk": 0.0, "jerk_lip": 0.0,
             "continuity": 0.0, "nonnegative": 0.0}
    for p in profile.pieces:
        if not (profile.T0 - tol <= p.t0 and p.t1 <= profile.T1 + tol):
            raise ValueError("profile breakpoint outside [T0, T1]")
        b = p.bounds()
        worst["speed"] = max(worst["speed"], b["max_speed"] - mu)
        worst["monotone"] = max(worst["monotone"], -b["min_speed"])
        worst["acc"] = max(worst["acc"], b["acc"] - M)
        worst["jerk"] = max(worst["jerk"], b["jerk"] - M)
        worst["jerk_lip"] = max(worst["jerk_lip"], b["jerk_lip"] - M)
        worst["nonnegative"] = max(worst["nonnegative"], -min(p.s0, p.s1))
    for a, b in zip(profile.pieces, profile.pieces[1:]):
        worst["continuity"] = max(worst["continuity"], abs(a.s1 - b.s0))
    for name, v in worst.items():
        scale = M if name in ("acc", "jerk", "jerk_lip") else max(1.0, mu)
        rep.checks[name] = Check(v <= tol * scale, max(v, 0.0), f"excess {v:.4g}")
    return rep


# ---------------------------------------------------------------------------
# Tip motions


@dataclass(frozen=True, eq=False)
class MeshMotion:
    """Local slide along the crack path carrying the tip from ``anchor`` to ``s(t)``.

    A point with curvilinear coordinates ``(sigma, n)`` relative to the path
    is sent to ``gamma(sigma + chi d) + n N(sigma + chi d)`` where
    ``d = s(t) - anchor`` and ``chi`` decays smoothly from 1 at the anchor
    point to 0 at distance ``2 rho``.  Points outside that ball are fixed.
    """

    path: CrackPath
    profile: LengthProfile
    anchor: float
    t0: float
    t1: float
    rho: float
    epsilon: float = 0.3

    @cached_property
    def center(self) -> np.ndarray:
        return self.path.point(self.anchor)

    def offset(self, t: float) -> float:
        return float(self.profile(t)) - self.anchor

    def _weight(self, y: np.ndarray) -> np.ndarray:
        q = np.linalg.norm(y - self.center, axis=1) / (2.0 * self.rho)
        return 1.0 - smoothstep(q)

    def curvilinear(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closest-point arc and signed normal offset for points near the anchor."""
        path = self.path
        lo, hi = self.anchor - 3 * self.rho, self.anchor + 3 * self.rho
        mask = (path.arcs >= lo) & (path.arcs <= hi)
        arcs, pts = path.arcs[mask], path.points[mask]
        d2 = ((y[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        sigma = arcs[np.argmin(d2, axis=1)].astype(float)
        for _ in range(30):
            g = path.point(sigma)
            g1 = path.point(sigma, 1)
            g2 = path.point(sigma, 2)
            diff = g - y
            f = np.einsum("ij,ij->i", diff, g1)
            fp = np.einsum("ij,ij->i", g1, g1) + np.einsum("ij,ij->i", diff, g2)
            new = np.clip(sigma - f / fp, path.a0, path.b)
            # measured after clipping so points pinned at a path end count as converged
            change = np.max(np.abs(new - sigma), initial=0.0)
            sigma = new
            if change < 1e-13 * max(1.0, abs(self.anchor)):
                break
        nrm = path.normal(sigma)
        n = np.einsum("ij,ij->i", y - path.point(sigma), nrm)
        return sigma, n

    def forward(self, t: float, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = y.copy()
        d = self.offset(t)
        if d == 0.0:
            return out
        near = np.linalg.norm(y - self.center, axis=1) < 2.0 * self.rho
        if not np.any(near):
            return out
        yy = y[near]
        sigma, n = self.curvilinear(yy)
        moved = sigma + self._weight(yy) * d
        g0, g1 = self.path.point(sigma), self.path.point(moved)
        n0, n1 = self.path.normal(sigma), self.path.normal(moved)
        out[near] = yy + (g1 - g0) + n[:, None] * (n1 - n0)
        return out

    def inverse(self, t: float, x: np.ndarray, tol: float = 1e-14, max_iter: int = 200) -> np.ndarray:
        """Fixed-point inversion ``y <- x - (Phi(y) - y)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = x.copy()
        scale = max(1.0, float(np.max(np.abs(x))))
        for _ in range(max_iter):
            err = self.forward(t, y) - x
            y_new = y - err
            delta = np.linalg.norm(y_new - y, axis=1)
            y = y_new
            if np.max(delta, initial=0.0) <= tol * scale:
                return y
        resid = np.linalg.norm(self.forward(t, y) - x, axis=1)
        i = int(np.argmax(resid))
        if resid[i] <= 1e2 * tol * scale:
            return y
        raise RuntimeError(f"inverse motion did not converge; worst point {x[i].tolist()} "
                           f"residual {resid[i]:.3e}")

    def jacobian_det(self, t: float, y: np.ndarray, step: float | None = None) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        h = 1e-6 * self.rho if step is None else step
        ex, ey = np.array([h, 0.0]), np.array([0.0, h])
        dx = (self.forward(t, y + ex) - self.forward(t, y - ex)) / (2 * h)
        dy = (self.forward(t, y + ey) - self.forward(t, y - ey)) / (2 * h)
        return dx[:, 0] * dy[:, 1] - dx[:, 1] * dy[:, 0]

    def velocity(self, t: float, y: np.ndarray, step: float = 1e-6) -> np.ndarray:
        a, b = max(self.t0, t - step), min(self.t1, t + step)
        return (self.forward(b, y) - self.forward(a, y)) / (b - a)

    def sample_points(self, n: int = 256, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        rad = 2.0 * self.rho * np.sqrt(rng.uniform(0, 1, n))
        ang = rng.uniform(0, 2 * np.pi, n)
        return self.center + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])

    def det_range(self, times: Sequence[float], points: np.ndarray | None = None):
        pts = self.sample_points() if points is None else points
        dets = np.concatenate([self.jacobian_det(t, pts) for t in times])
        return float(dets.min()), float(dets.max())


def sliding_motion(path: CrackPath, profile: LengthProfile, anchor: float, t0: float, t1: float,
                   rho: float, epsilon: float, domain: DomainSpec | None = None) -> MeshMotion:
    """Motion anchored at an arbitrary crack point, valid on ``[t0, t1]``.

    Checks that the ball sits inside the domain and that the Jacobian stays
    within ``1 +- epsilon`` at both ends of the window (the offset is
    monotone in time, so the extremes occur there).
    """
    motion = MeshMotion(path, profile, anchor, t0, t1, rho, epsilon)
    if max(float(profile(t0)), float(profile(t1))) > path.b + 1e-12:
        raise ValueError("profile exceeds the end of the path")
    if domain is not None:
        if domain.boundary_distance(motion.center[None, :])[0] <= 2 * rho:
            raise ValueError("motion ball B(tip, 2 rho) is not interior to the domain")
    lo, hi = motion.det_range([t0, t1])
    if lo < 1 - epsilon or hi > 1 + epsilon:
        raise ValueError(f"motion Jacobian determinant range [{lo:.4f}, {hi:.4f}] "
                         f"leaves [1 - {epsilon}, 1 + {epsilon}]")
    return motion


def build_tip_motion(path: CrackPath, profile: LengthProfile, t0: float, t1: float, rho: float,
                     epsilon: float = 0.3, domain: DomainSpec | None = None,
                     extended: CrackPath | None = None) -> MeshMotion:
    """Tip motion on ``[t0, t1]`` centred at ``gamma(s(t0))``.

    ``path`` carries the original budget ``(r, L)``; the slide runs along its
    extension so the ball around the tip is covered by the curve.
    """
    mu = profile.mu
    if t1 - t0 > rho / (2.0 * mu) + 1e-14:
        raise ValueError(f"window {t1 - t0:.4g} exceeds rho/(2 mu) = {rho / (2 * mu):.4g}")
    if float(profile(t1)) > path.b + 1e-12:
        raise ValueError("s(t1) exceeds the end of the path")
    r_hat, _ = extension_constants(path.r, path.L)
    if not rho < r_hat / 2:
        raise ValueError(f"rho = {rho:.4g} must be below r_hat/2 = {r_hat / 2:.4g}")
    ext = extended if extended is not None else extend_path(path, domain)
    return sliding_motion(ext, profile, float(profile(t0)), t0, t1, rho, epsilon, domain)
