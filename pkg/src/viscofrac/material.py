"""Elasticity and viscosity tensor fields on 2x2 matrices.

Tensors are stored as ``(2, 2, 2, 2)`` arrays acting by double contraction,
``(T A)_ij = T_ijkl A_kl``.  A field is spatially constant unless region
overrides are given; overrides are axis-aligned boxes checked in order, the
first match wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_I2 = np.eye(2)


def isotropic_tensor(lame_lambda: float, lame_mu: float) -> np.ndarray:
    """Return ``T`` with ``T A = 2 mu A_sym + lambda tr(A) I``."""
    d = _I2
    return (
        lame_lambda * np.einsum("ij,kl->ijkl", d, d)
        + lame_mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
    )


def apply_tensor(tensor: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Contract a tensor (or a stack of per-element tensors) with matrices."""
    tensor = np.asarray(tensor)
    A = np.asarray(A)
    if tensor.ndim == 4:
        return np.einsum("ijkl,...kl->...ij", tensor, A)
    return np.einsum("eijkl,ekl->eij", tensor, A)


def voigt_matrix(tensor: np.ndarray) -> np.ndarray:
    """3x3 matrix acting on engineering strain ``[e11, e22, 2 e12]``.

    Accepts a single tensor or a stack ``(n, 2, 2, 2, 2)``.
    """
    idx = [(0, 0), (1, 1), (0, 1)]
    t = np.asarray(tensor)
    out = np.empty(t.shape[:-4] + (3, 3))
    for a, (i, j) in enumerate(idx):
        for b, (k, l) in enumerate(idx):
            out[..., a, b] = t[..., i, j, k, l]
    return out


@dataclass(frozen=True)
class Region:
    """Box ``[xmin, xmax] x [ymin, ymax]`` carrying its own tensor."""

    name: str
    box: tuple[float, float, float, float]
    tensor: np.ndarray = field(compare=False)

    def contains(self, points: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = self.box
        p = np.atleast_2d(points)
        return (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Piecewise-constant fourth-order tensor field.

    ``window`` is the exact ellipticity window of ``base`` when it is known
    (isotropic construction); region tensors may widen it.
    """

    base: np.ndarray
    regions: tuple[Region, ...] = ()
    kind: str = "elastic"
    window: tuple[float, float] | None = None

    def at(self, points: np.ndarray) -> np.ndarray:
        """Tensor at each point, shape ``(n, 2, 2, 2, 2)``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.broadcast_to(self.base, (p.shape[0], 2, 2, 2, 2)).copy()
        assigned = np.zeros(p.shape[0], dtype=bool)
        for region in self.regions:
            hit = region.contains(p) & ~assigned
            out[hit] = region.tensor
            assigned |= hit
        return out

    def __call__(self, x: np.ndarray, A: np.ndarray) -> np.ndarray:
        return apply_tensor(self.at(np.asarray(x, dtype=float)[None, :])[0], A)

    @property
    def is_constant(self) -> bool:
        return not self.regions

    def __add__(self, other: "TensorField") -> "TensorField":
        if self.regions or other.regions:
            raise ValueError("sum of region-dependent fields is not supported; "
                             "evaluate both with .at() and add the arrays")
        window = None
        if self.window and other.window:
            window = (self.window[0] + other.window[0], self.window[1] + other.window[1])
        return TensorField(self.base + other.base, kind="combined", window=window)


def make_isotropic(lame_lambda: float, lame_mu: float, kind: str = "elastic") -> TensorField:
    """Isotropic tensor ``A -> 2 mu A_sym + lambda tr(A) I``.

    For 2D symmetric matrices the quadratic form is
    ``2 mu |A|^2 + lambda tr(A)^2`` and ``tr(A)^2 <= 2 |A|^2``, so the
    window is ``(2 mu, 2 mu + 2 lambda)``.
    """
    if not lame_mu > 0:
        raise ValueError(f"lame_mu must be positive, got {lame_mu}")
    if lame_lambda < 0:
        raise ValueError(f"lame_lambda must be nonnegative, got {lame_lambda}")
    if kind not in ("elastic", "viscous"):
        raise ValueError(f"kind must be 'elastic' or 'viscous', got {kind!r}")
    return TensorField(
        isotropic_tensor(lame_lambda, lame_mu),
        kind=kind,
        window=(2.0 * lame_mu, 2.0 * lame_mu + 2.0 * lame_lambda),
    )


@dataclass
class ClassReport:
    passed: bool
    worst_violation: float
    symmetry: float
    major_symmetry: float
    lower_bound: float
    upper_bound: float
    samples: int

    @property
    def failed_properties(self) -> list[str]:
        names = ("symmetry", "major_symmetry", "lower_bound", "upper_bound")
        return [n for n in names if getattr(self, n) > 0.0]


def check_tensor_class(
    field_: TensorField | Callable[[np.ndarray, np.ndarray], np.ndarray],
    lam: float,
    Lam: float,
    sample_points: Sequence,
    sample_matrices: Sequence,
    rtol: float = 1e-12,
) -> ClassReport:
    """Check symmetry, major symmetry and the ellipticity window by sampling.

    Violations are measured relative to ``|A| |B|`` (or ``|A|^2``) and
    anything below ``rtol`` counts as zero.
    """
    points = np.atleast_2d(np.asarray(sample_points, dtype=float))
    mats = np.asarray(sample_matrices, dtype=float).reshape(-1, 2, 2)
    if len(points) == 0 or len(mats) == 0:
        raise ValueError("sample sets must be nonempty")

    sym = major = low = up = 0.0
    for x in points:
        outs = np.array([field_(x, A) for A in mats])
        outs_sym = np.array([field_(x, 0.5 * (A + A.T)) for A in mats])
        norms = np.linalg.norm(mats, axis=(1, 2))
        norms = np.where(norms > 0, norms, 1.0)
        asym = np.linalg.norm(outs - np.swapaxes(outs, 1, 2), axis=(1, 2))
        dep = np.linalg.norm(outs - outs_sym, axis=(1, 2))
        sym = max(sym, float(np.max(np.maximum(asym, dep) / norms)))

        rolled = np.roll(mats, 1, axis=0)
        outs_rolled = np.roll(outs, 1, axis=0)
        ab = np.einsum("nij,nij->n", outs, rolled)
        ba = np.einsum("nij,nij->n", outs_rolled, mats)
        major = max(major, float(np.max(np.abs(ab - ba) / (norms * np.roll(norms, 1)))))

        A_sym = 0.5 * (mats + np.swapaxes(mats, 1, 2))
        q = np.einsum("nij,nij->n", outs, mats)
        n2 = np.einsum("nij,nij->n", A_sym, A_sym)
        scale = norms**2
        low = max(low, float(np.max((lam * n2 - q) / scale)))
        up = max(up, float(np.max((q - Lam * n2) / scale)))

    vals = [v if v > rtol else 0.0 for v in (sym, major, low, up)]
    if not (0 < lam <= Lam):
        vals[2] = max(vals[2], 1.0)
    worst = max(vals)
    return ClassReport(worst == 0.0, worst, *vals, samples=len(points) * len(mats))


def default_samples(n_points: int = 32, n_matrices: int = 64, seed: int = 0,
                    bbox: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)):
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = bbox
    pts = np.column_stack([rng.uniform(x0, x1, n_points), rng.uniform(y0, y1, n_points)])
    mats = rng.normal(size=(n_matrices, 2, 2))
    return pts, mats


@dataclass(frozen=True, eq=False)
class MaterialModel:
    """Elasticity ``C`` and viscosity ``V`` sharing the window ``(lam, Lam)``."""

    C: TensorField
    V: TensorField
    lam: float
    Lam: float

    def __post_init__(self):
        if not (0 < self.lam <= self.Lam):
            raise ValueError(f"need 0 < lambda <= Lambda, got ({self.lam}, {self.Lam})")

    @classmethod
    def isotropic(cls, elastic: tuple[float, float], viscous: tuple[float, float]) -> "MaterialModel":
        """Build from ``(lame_lambda, lame_mu)`` pairs; the window is the hull of both."""
        C = make_isotropic(*elastic, kind="elastic")
        V = make_isotropic(*viscous, kind="viscous")
        lam = min(C.window[0], V.window[0])
        Lam = max(C.window[1], V.window[1])
        return cls(C, V, lam, Lam)

    def tensors_at(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.C.at(points), self.V.at(points)

    def combined_at(self, points: np.ndarray) -> np.ndarray:
        C, V = self.tensors_at(points)
        return C + V

    def validate(self, points=None, matrices=None) -> dict[str, ClassReport]:
        if points is None or matrices is None:
            points, matrices = default_samples()
        return {
            "C": check_tensor_class(self.C, self.lam, self.Lam, points, matrices),
            "V": check_tensor_class(self.V, self.lam, self.Lam, points, matrices),
        }
