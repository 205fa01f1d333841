"""Time stepping for the viscoelastic wave equation with exponential memory.

Discrete problem on a (possibly moving) cracked mesh::

    M a + K_A u - G z = M f + G F,       z(t) = int_{T0}^t e^{tau - t} V Eu(tau) dtau

with ``A = C + V``.  Time stepping is Newmark average acceleration
(beta = 1/4, gamma = 1/2) with equilibrium enforced at the new time level;
the memory state is advanced with weights that are exact for strains
linear in time.  Dirichlet values are imposed strongly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .material import MaterialModel, apply_tensor
from .mesh import CrackedMesh

Field = Callable[[float, np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Memory recursion and history


def memory_weights(dt: float) -> tuple[float, float]:
    """Weights ``(w0, w1)`` of ``int_0^dt e^{s - dt} ((1 - s/dt) E0 + (s/dt) E1) ds``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt < 1e-3:
        # series of (dt - 1 + e^{-dt}) / dt avoids cancellation
        w1 = dt / 2 - dt**2 / 6 + dt**3 / 24 - dt**4 / 120 + dt**5 / 720
    else:
        w1 = (dt + math.expm1(-dt)) / dt
    w0 = -math.expm1(-dt) - w1
    return w0, w1


def memory_update(z_n: np.ndarray, Eu_n: np.ndarray, Eu_np1: np.ndarray, dt: float,
                  viscosity: np.ndarray) -> np.ndarray:
    """Advance ``z`` over one step; exact when ``Eu`` is linear on the step."""
    w0, w1 = memory_weights(dt)
    mix = w0 * np.asarray(Eu_n) + w1 * np.asarray(Eu_np1)
    return math.exp(-dt) * np.asarray(z_n) + apply_tensor(viscosity, mix)


@dataclass(frozen=True)
class HistoryData:
    """Strain history on ``(-inf, 0]``: ``zero``, ``constant`` or ``exponential``.

    ``exponential`` means ``e^{alpha tau} B`` and requires ``alpha > -1`` so
    the memory integral converges.
    """

    family: str = "zero"
    strain: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (0.0, 0.0))
    alpha: float = 0.0

    def __post_init__(self):
        if self.family not in ("zero", "constant", "exponential"):
            raise ValueError(f"unsupported history family {self.family!r}")
        B = np.asarray(self.strain, dtype=float)
        if B.shape != (2, 2):
            raise ValueError("history strain must be a 2x2 matrix")
        object.__setattr__(self, "strain", tuple(map(tuple, B.tolist())))
        if self.family == "exponential" and not self.alpha > -1:
            raise ValueError("exponential history needs alpha > -1")

    def factor(self, t: float) -> float:
        if self.family == "zero":
            return 0.0
        if self.family == "constant":
            return math.exp(-t)
        return math.exp(-t) / (1.0 + self.alpha)


def history_forcing(history: HistoryData, t: float, viscosity: np.ndarray) -> np.ndarray:
    """Stress ``int_{-inf}^0 e^{tau - t} V Eu0(tau) dtau`` per element (or single tensor)."""
    if t < 0:
        raise ValueError("history forcing is defined for t >= 0")
    B = np.asarray(history.strain)
    c = history.factor(t)
    V = np.asarray(viscosity)
    if V.ndim == 4:
        return c * apply_tensor(V, B)
    return c * apply_tensor(V, np.broadcast_to(B, (V.shape[0], 2, 2)))


# ---------------------------------------------------------------------------
# Loads and state


@dataclass(frozen=True)
class LoadSet:
    """Body force, stress load, Dirichlet data and initial data as callables.

    Time-dependent fields take ``(t, points)``; stresses return ``(n, 2, 2)``
    and vector fields ``(n, 2)``.  Missing entries are zero.
    """

    body_force: Field | None = None
    stress: Field | None = None
    stress_rate: Field | None = None
    dirichlet: Field | None = None
    dirichlet_rate: Field | None = None
    dirichlet_accel: Field | None = None
    initial_displacement: Callable[[np.ndarray], np.ndarray] | None = None
    initial_velocity: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.stress is not None and self.stress_rate is None:
            raise ValueError("a stress load needs its time derivative")
        if self.dirichlet is not None and (self.dirichlet_rate is None or self.dirichlet_accel is None):
            raise ValueError("Dirichlet data need first and second time derivatives")

    @staticmethod
    def _vec(fn, t, x):
        return np.zeros((len(x), 2)) if fn is None else np.asarray(fn(t, x), dtype=float).reshape(len(x), 2)

    @staticmethod
    def _mat(fn, t, x):
        return np.zeros((len(x), 2, 2)) if fn is None else np.asarray(fn(t, x), dtype=float).reshape(len(x), 2, 2)

    def f(self, t, x):
        return self._vec(self.body_force, t, x)

    def F(self, t, x):
        return self._mat(self.stress, t, x)

    def F_rate(self, t, x):
        return self._mat(self.stress_rate, t, x)

    def uD(self, t, x):
        return self._vec(self.dirichlet, t, x)

    def uD_rate(self, t, x):
        return self._vec(self.dirichlet_rate, t, x)

    def uD_accel(self, t, x):
        return self._vec(self.dirichlet_accel, t, x)

    def u0(self, x):
        return np.zeros((len(x), 2)) if self.initial_displacement is None else \
            np.asarray(self.initial_displacement(x), dtype=float).reshape(len(x), 2)

    def u1(self, x):
        return np.zeros((len(x), 2)) if self.initial_velocity is None else \
            np.asarray(self.initial_velocity(x), dtype=float).reshape(len(x), 2)


@dataclass
class SolverState:
    """Nodal ``u, v, a`` (full vectors), per-element memory ``z`` and carried memory.

    ``carry`` is the memory accumulated before the current window start
    ``t_carry``; it decays as ``e^{-(t - t_carry)}`` and enters as a stress load.
    """

    t: float
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray | None
    z: np.ndarray
    mesh: CrackedMesh
    carry: np.ndarray | None = None
    t_carry: float = 0.0

    def copy(self) -> "SolverState":
        return replace(self, u=self.u.copy(), v=self.v.copy(),
                       a=None if self.a is None else self.a.copy(), z=self.z.copy(),
                       carry=None if self.carry is None else self.carry.copy())


def lifted(mesh: CrackedMesh, values: np.ndarray) -> np.ndarray:
    """Full nodal vector equal to ``values`` on Dirichlet nodes, zero elsewhere."""
    out = np.zeros((mesh.n_nodes, 2))
    out[mesh.dirichlet] = values
    return out.reshape(-1)


def dirichlet_lift(mesh: CrackedMesh, loads: LoadSet, t: float, order: int = 0) -> np.ndarray:
    fn = (loads.uD, loads.uD_rate, loads.uD_accel)[order]
    return lifted(mesh, fn(t, mesh.nodes[mesh.dirichlet]))


def initial_state(mesh: CrackedMesh, loads: LoadSet, T0: float = 0.0) -> SolverState:
    x = mesh.nodes
    u = loads.u0(x)
    v = loads.u1(x)
    u[mesh.dirichlet] = loads.uD(T0, x[mesh.dirichlet])
    v[mesh.dirichlet] = loads.uD_rate(T0, x[mesh.dirichlet])
    u = mesh.extend(mesh.restrict(u.reshape(-1)))
    v = mesh.extend(mesh.restrict(v.reshape(-1)))
    z = np.zeros((len(mesh.tris), 2, 2))
    return SolverState(T0, u, v, None, z, mesh, None, T0)


def start_window(state: SolverState) -> SolverState:
    """Fold the running memory into the carried part and restart ``z`` at zero."""
    out = state.copy()
    decay = math.exp(-(state.t - state.t_carry))
    carry = state.z if state.carry is None else state.z + decay * state.carry
    out.carry = carry.copy()
    out.t_carry = state.t
    out.z = np.zeros_like(state.z)
    return out


# ---------------------------------------------------------------------------
# Operators


class Operators:
    """Material-dependent matrices of one mesh, restricted to its active DOFs."""

    def __init__(self, mesh: CrackedMesh, material: MaterialModel):
        self.mesh = mesh
        asm = mesh.assembly
        self.C_el, self.V_el = material.tensors_at(asm.centroids)
        self.A_el = self.C_el + self.V_el
        self.M = asm.mass
        self.K_V = asm.stiffness(self.V_el)
        self.K_C = asm.stiffness(self.C_el)
        # stiffness is linear in the tensor
        self.K_A = (self.K_C + self.K_V).tocsr()
        P = mesh.prolongation
        self.P = P
        self.Ma = (P.T @ self.M @ P).tocsc()
        self.KAa = (P.T @ self.K_A @ P).tocsc()
        self.KVa = (P.T @ self.K_V @ P).tocsc()
        self.free = mesh.free_active_dofs
        self.fixed = mesh.dirichlet_active_dofs
        self._lu: dict = {}

    def blocks(self, K: sp.spmatrix):
        f, d = self.free, self.fixed
        return K[f][:, f], K[f][:, d]

    def factor(self, key, matrix: sp.spmatrix):
        if key not in self._lu:
            try:
                self._lu[key] = splu(matrix.tocsc())
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
        return self._lu[key]


def operators(mesh: CrackedMesh, material: MaterialModel) -> Operators:
    key = ("ops", id(material))
    hit = mesh.cache.get(key)
    if hit is None or hit[0] is not material:
        hit = (material, Operators(mesh, material))
        mesh.cache[key] = hit
    return hit[1]


def effective_stress(state_like, mesh: CrackedMesh, loads: LoadSet, history: HistoryData | None,
                     V_el: np.ndarray, t: float, rate: bool = False) -> np.ndarray:
    """User stress plus history forcing plus carried memory (or their time derivative)."""
    cen = mesh.assembly.centroids
    out = loads.F_rate(t, cen) if rate else loads.F(t, cen)
    if history is not None and history.family != "zero":
        hf = history_forcing(history, t, V_el)
        out = out - hf if rate else out + hf
    carry = getattr(state_like, "carry", None)
    if carry is not None:
        decay = math.exp(-(t - state_like.t_carry)) * carry
        out = out - decay if rate else out + decay
    return out


def _solve(lu, rhs: np.ndarray, matrix: sp.spmatrix) -> np.ndarray:
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve produced non-finite values")
    res = np.linalg.norm(matrix @ x - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if res > 1e-8 * scale and res > 1e-12:
        raise SolverError(f"linear solve residual {res:.3e} (relative {res / scale:.3e})")
    return x


def initialize_acceleration(state: SolverState, loads: LoadSet, material: MaterialModel,
                            history: HistoryData | None = None, memory: bool = True,
                            stress_offset: np.ndarray | None = None) -> SolverState:
    """Acceleration from equilibrium at ``state.t`` (consistent initialization)."""
    mesh = state.mesh
    ops = operators(mesh, material)
    asm = mesh.assembly
    t = state.t
    F = effective_stress(state, mesh, loads, history, ops.V_el, t)
    if stress_offset is not None:
        F = F + stress_offset
    rhs_full = ops.M @ loads.f(t, mesh.nodes).reshape(-1) + asm.stress_load(F)
    if memory:
        rhs_full = rhs_full + asm.stress_load(state.z)
    rhs_full = rhs_full - ops.K_A @ state.u
    rhs = ops.P.T @ rhs_full
    aD = mesh.restrict(dirichlet_lift(mesh, loads, t, 2))
    a = np.zeros(2 * mesh.n_active)
    a[ops.fixed] = aD[ops.fixed]
    Mff, MfD = ops.blocks(ops.Ma)
    lu = ops.factor("mass", Mff)
    a[ops.free] = _solve(lu, rhs[ops.free] - MfD @ a[ops.fixed], Mff)
    out = state.copy()
    out.a = mesh.extend(a)
    return out


def _advance(state: SolverState, dt: float, loads: LoadSet, material: MaterialModel,
             history: HistoryData | None, mesh: CrackedMesh | None, memory: bool,
             stress_offset: np.ndarray | None = None) -> SolverState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if state.a is None:
        state = initialize_acceleration(state, loads, material, history, memory)
    old = state.mesh
    new = old if mesh is None else mesh
    if new is not old and new.tris.shape != old.tris.shape:
        raise ValueError("meshes differ in connectivity; transfer the state first")
    ops = operators(new, material)
    asm = new.assembly
    t1 = state.t + dt
    w0, w1 = memory_weights(dt)

    F = effective_stress(state, new, loads, history, ops.V_el, t1)
    if stress_offset is not None:
        F = F + stress_offset
    rhs_full = ops.M @ loads.f(t1, new.nodes).reshape(-1) + asm.stress_load(F)
    if memory:
        Eu0 = old.assembly.strain(state.u)
        z_known = math.exp(-dt) * state.z + w0 * apply_tensor(ops.V_el, Eu0)
        rhs_full = rhs_full + asm.stress_load(z_known)
        K = ops.KAa - w1 * ops.KVa
        kind = ("visco", dt)
    else:
        K = ops.KAa
        kind = ("elastic", dt)
    rhs = ops.P.T @ rhs_full

    u0, v0, a0 = new.restrict(state.u), new.restrict(state.v), new.restrict(state.a)
    u_pred = u0 + dt * v0 + 0.25 * dt * dt * a0
    v_pred = v0 + 0.5 * dt * a0
    f_, d_ = ops.free, ops.fixed
    uD = new.restrict(dirichlet_lift(new, loads, t1, 0))[d_]
    vD = new.restrict(dirichlet_lift(new, loads, t1, 1))[d_]
    aD = new.restrict(dirichlet_lift(new, loads, t1, 2))[d_]

    cache = new.cache.setdefault(("blocks", id(material), kind), {})
    if "S" not in cache:
        Kff, KfD = ops.blocks(K)
        Mff, MfD = ops.blocks(ops.Ma)
        cache.update(S=(Mff + 0.25 * dt * dt * Kff).tocsc(), Kff=Kff, KfD=KfD, MfD=MfD)
    S = cache["S"]
    lu = ops.factor(kind, S)
    b = rhs[f_] - cache["MfD"] @ aD - cache["Kff"] @ u_pred[f_] - cache["KfD"] @ uD
    a_f = _solve(lu, b, S)

    u1 = np.empty_like(u0)
    v1 = np.empty_like(v0)
    a1 = np.empty_like(a0)
    u1[f_] = u_pred[f_] + 0.25 * dt * dt * a_f
    v1[f_] = v_pred[f_] + 0.5 * dt * a_f
    a1[f_] = a_f
    u1[d_], v1[d_], a1[d_] = uD, vD, aD
    u1, v1, a1 = new.extend(u1), new.extend(v1), new.extend(a1)
    if memory:
        z1 = z_known + w1 * apply_tensor(ops.V_el, asm.strain(u1))
    else:
        z1 = state.z.copy()
    return SolverState(t1, u1, v1, a1, z1, new, state.carry, state.t_carry)


def step_visco(state: SolverState, dt: float, loads: LoadSet, material: MaterialModel,
               history: HistoryData | None = None, mesh: CrackedMesh | None = None) -> SolverState:
    """One step of the memory problem; ``mesh`` is the geometry at the new time."""
    return _advance(state, dt, loads, material, history, mesh, True)


def step_elastic(state: SolverState, dt: float, loads: LoadSet, material: MaterialModel,
                 history: HistoryData | None = None, mesh: CrackedMesh | None = None,
                 stress_offset: np.ndarray | None = None) -> SolverState:
    """One step with tensor ``C + V`` and no memory; ``stress_offset`` adds to ``F``."""
    return _advance(state, dt, loads, material, history, mesh, False, stress_offset)


# ---------------------------------------------------------------------------
# Trajectories


@dataclass
class Trajectory:
    states: list[SolverState] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def index_of(self, t: float) -> int:
        times = self.times
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the trajectory step grid")
        return i

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    @property
    def final(self) -> SolverState:
        return self.states[-1]


def step_grid(T0: float, T1: float, dt: float, multiple: int = 1) -> np.ndarray:
    if not T1 > T0:
        raise ValueError("need T1 > T0")
    if dt > T1 - T0 + 1e-14:
        raise ValueError(f"dt = {dt} exceeds the interval length {T1 - T0}")
    n = math.ceil((T1 - T0) / dt - 1e-9)
    n = multiple * math.ceil(n / multiple)
    return T0 + (T1 - T0) * np.arange(n + 1) / n


def solve_fixed_crack(mesh: CrackedMesh, loads: LoadSet, history: HistoryData | None,
                      material: MaterialModel, T0: float, T1: float, dt: float,
                      state: SolverState | None = None, memory: bool = True,
                      stress_offsets: list[np.ndarray] | None = None) -> Trajectory:
    """Integrate on a fixed mesh over ``[T0, T1]`` and keep every state.

    ``stress_offsets[n]`` (elastic runs only) is added to ``F`` at step ``n``.
    """
    times = step_grid(T0, T1, dt)
    st = initial_state(mesh, loads, T0) if state is None else state
    st = replace(st, t=float(times[0]))
    if st.a is None:
        off0 = None if stress_offsets is None else stress_offsets[0]
        st = initialize_acceleration(st, loads, material, history, memory, off0)
    traj = Trajectory([st])
    h = float((times[-1] - times[0]) / (len(times) - 1))
    for n in range(1, len(times)):
        if memory:
            st = step_visco(st, h, loads, material, history)
        else:
            off = None if stress_offsets is None else stress_offsets[n]
            st = step_elastic(st, h, loads, material, history, stress_offset=off)
        st.t = float(times[n])
        traj.states.append(st)
    return traj
