"""Lindblad master equation solvers.

A :class:`LindbladGenerator` bundles the Hamiltonian with a set of collapse
operators.  Three ways of applying it are provided and kept consistent with
each other:

* a matrix-free application ``apply_generator`` working on density matrices,
* a materialized superoperator (column-stacking convention) for moderate
  dimensions, used by the vectorized integrators and the steady-state solver,
* integrators: a fixed-step classical 4th-order scheme (default) and an
  adaptive stiff scheme for the very long horizons, where the fixed-step
  cost would be wasted on dynamics that has long gone quiet.

The generator preserves trace and Hermiticity exactly; the integrators
re-Hermitize each step and abort loudly if the numerical trace drifts.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .model import ModeLayout
from .qspace import CompositeSpace, DensityMatrix, SparseOp

__all__ = [
    "LindbladGenerator",
    "Trajectory",
    "SteadyStateResult",
    "DegenerateSteadyStateError",
    "SuperoperatorSizeError",
    "TraceDriftError",
    "liouvillian_matrix",
    "apply_generator",
    "evolve",
    "steady_state",
    "atomic_populations",
    "reduced_atom_matrix",
    "population_recorder",
    "manifold_recorder",
]

SUPEROP_CEILING = 40_000  # max columns of a materialized superoperator
DEFAULT_DT = 0.02  # in units of 1/g

GROUND_PAIRS = ((0, 0), (0, 1), (1, 0), (1, 1))


class SuperoperatorSizeError(ValueError):
    """Materializing the superoperator would exceed the column ceiling."""


class DegenerateSteadyStateError(RuntimeError):
    """The generator has more than one steady state."""


class TraceDriftError(RuntimeError):
    """The integrated state stopped being a density matrix."""


@dataclass
class LindbladGenerator:
    """Hamiltonian plus collapse operators, with cached derived pieces."""

    hamiltonian: SparseOp
    collapse: list[SparseOp]
    _anticomm: SparseOp | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        d = self.hamiltonian.dim
        for op in self.collapse:
            if op.dim != d:
                raise ValueError("collapse operator dimension mismatch")

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    def anticommutator_part(self) -> SparseOp:
        """K = sum_i L_i^dag L_i, cached."""
        if self._anticomm is None:
            k = SparseOp.zeros(self.dim)
            for op in self.collapse:
                k = k + (op.dag() @ op)
            self._anticomm = k
        return self._anticomm


def apply_generator(gen: LindbladGenerator, rho: np.ndarray) -> np.ndarray:
    """Matrix-free rho_dot = -i[H, rho] + sum_i (L rho L^dag - {L^dag L, rho}/2)."""
    h = gen.hamiltonian.matrix
    out = -1j * (h @ rho - (h.conj().T @ rho.conj().T).conj().T)
    k = gen.anticommutator_part().matrix
    out -= 0.5 * (k @ rho + (k.conj().T @ rho.conj().T).conj().T)
    for op in gen.collapse:
        l = op.matrix
        # rho @ l.conj().T via sparse-left products: (l rho^dag)^dag = rho l^dag
        out += l @ (l @ rho.conj().T).conj().T
    return out


def liouvillian_matrix(gen: LindbladGenerator, max_columns: int = SUPEROP_CEILING) -> sp.csr_matrix:
    """Materialize the superoperator in the column-stacking convention.

    vec(rho) stacks columns (Fortran order), so vec(A rho B) =
    (B^T kron A) vec(rho).  Refuses to build anything wider than
    ``max_columns`` columns; callers hitting the ceiling should use the
    matrix-free path (:func:`apply_generator`) instead.
    """
    d = gen.dim
    if d * d > max_columns:
        raise SuperoperatorSizeError(
            f"superoperator would have {d * d} columns (ceiling {max_columns}); "
            "use the matrix-free path (apply_generator / evolve with method='rk4')"
        )
    h = gen.hamiltonian.matrix.tocsr()
    ident = sp.identity(d, dtype=complex, format="csr")
    liou = -1j * (sp.kron(ident, h, format="csr") - sp.kron(h.T, ident, format="csr"))
    for op in gen.collapse:
        l = op.matrix.tocsr()
        ldl = (l.conj().T @ l).tocsr()
        liou = liou + sp.kron(l.conj(), l, format="csr")
        liou = liou - 0.5 * sp.kron(ident, ldl, format="csr")
        liou = liou - 0.5 * sp.kron(ldl.T, ident, format="csr")
    liou = liou.tocsr()
    liou.eliminate_zeros()
    return liou


def _vec(rho: np.ndarray) -> np.ndarray:
    return rho.flatten(order="F")


def _unvec(v: np.ndarray, d: int) -> np.ndarray:
    return v.reshape((d, d), order="F")


@dataclass
class Trajectory:
    """Time series of named populations plus integrator bookkeeping."""

    times: np.ndarray
    records: dict[str, np.ndarray]
    trace_err: np.ndarray
    final: DensityMatrix
    method: str
    dt: float | None

    CSV_COLUMNS = ("t", "P00", "PS", "PT", "P11", "leak", "trace_err")

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return self.times
        if name == "trace_err":
            return self.trace_err
        return self.records[name]

    def to_csv(self) -> str:
        cols = [self.column(c) for c in self.CSV_COLUMNS]
        lines = [",".join(self.CSV_COLUMNS)]
        for row in zip(*cols):
            lines.append(",".join(_fmt12(x) for x in row))
        return "\n".join(lines) + "\n"

    def validate(self, pop_tol: float = 1e-8) -> None:
        for name, arr in self.records.items():
            if name == "leak":
                continue
            if np.min(arr) < -pop_tol or np.max(arr) > 1 + pop_tol:
                raise ValueError(f"population {name} leaves [0, 1] beyond {pop_tol:.1e}")

    def final_value(self, name: str) -> float:
        return float(self.records[name][-1])


def _fmt12(x: float) -> str:
    return f"{x:.11e}"


def population_recorder(space: CompositeSpace, layout: ModeLayout) -> Callable[[np.ndarray], dict[str, float]]:
    """Recorder producing the standard P00/PS/PT/P11/leak columns."""

    def rec(rho: np.ndarray) -> dict[str, float]:
        return atomic_populations(rho, space, layout)

    return rec


def manifold_recorder() -> Callable[[np.ndarray], dict[str, float]]:
    """Recorder for 4-level generators on the (|00>, |S>, |T>, |11>) basis."""

    def rec(rho: np.ndarray) -> dict[str, float]:
        d = np.real(np.diag(rho))
        return {
            "P00": float(d[0]),
            "PS": float(d[1]),
            "PT": float(d[2]),
            "P11": float(d[3]),
            "leak": float(1.0 - d.sum()),
        }

    return rec


def evolve(
    gen: LindbladGenerator,
    rho0: np.ndarray | DensityMatrix,
    t_final: float,
    *,
    dt: float = DEFAULT_DT,
    method: str = "rk4",
    record_interval: float | None = None,
    recorder: Callable[[np.ndarray], dict[str, float]] | None = None,
    trace_abort: float = 1e-4,
    rtol: float = 1e-8,
    atol: float = 1e-12,
    superop_ceiling: int = SUPEROP_CEILING,
) -> Trajectory:
    """Integrate rho_dot = L[rho] from 0 to ``t_final``.

    method = "rk4": fixed-step classical 4th order, step ``dt``, the state
    re-Hermitized every step.  Uses the vectorized superoperator when it is
    materializable, otherwise falls back to operator products on the
    density matrix (matrix-free).

    method = "adaptive": error-controlled implicit trapezoid stepping
    (A-stable, step-doubling error estimate at relative tolerance
    ``rtol``) after an explicit warm-up through the fast transient.
    Suited to the long pumping horizons where the dynamics slows down by
    orders of magnitude.  Requires a materializable superoperator; above
    the ceiling an explicit adaptive scheme on the matrix-free
    application is used.

    Aborts with a diagnostic if the trace drifts by more than
    ``trace_abort`` at any record point.
    """
    rho = rho0.array.copy() if isinstance(rho0, DensityMatrix) else np.array(rho0, dtype=complex)
    d = gen.dim
    if rho.shape != (d, d):
        raise ValueError(f"initial state has shape {rho.shape}, generator dimension is {d}")
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if recorder is None:
        recorder = manifold_recorder() if d == 4 else _diag_recorder
    if record_interval is None:
        record_interval = max(t_final / 400.0, dt)

    if method == "rk4":
        return _evolve_rk4(gen, rho, t_final, dt, record_interval, recorder, trace_abort, superop_ceiling)
    if method == "adaptive":
        return _evolve_adaptive(gen, rho, t_final, record_interval, recorder, trace_abort, rtol, atol, superop_ceiling)
    raise ValueError(f"unknown integration method {method!r}")


def _diag_recorder(rho: np.ndarray) -> dict[str, float]:
    return {"P0": float(np.real(rho[0, 0]))}


def _record_point(
    recorder, rho: np.ndarray, t: float, times: list, recs: list, terrs: list, trace_abort: float
) -> None:
    tr = np.trace(rho)
    terr = abs(tr - 1.0)
    if terr > trace_abort:
        raise TraceDriftError(
            f"trace drifted to |tr-1| = {terr:.3e} at t = {t:.6g} (abort threshold "
            f"{trace_abort:.1e}); reduce dt or check the generator"
        )
    times.append(t)
    recs.append(recorder(rho))
    terrs.append(terr)


def _pack_trajectory(times, recs, terrs, rho, method, dt) -> Trajectory:
    keys = list(recs[0].keys())
    records = {k: np.array([r[k] for r in recs], dtype=float) for k in keys}
    final = DensityMatrix(0.5 * (rho + rho.conj().T))
    return Trajectory(
        times=np.array(times),
        records=records,
        trace_err=np.array(terrs),
        final=final,
        method=method,
        dt=dt,
    )


def _evolve_rk4(gen, rho, t_final, dt, record_interval, recorder, trace_abort, ceiling) -> Trajectory:
    d = gen.dim
    n_steps = max(1, int(round(t_final / dt)))
    dt = t_final / n_steps
    stride = max(1, int(round(record_interval / dt)))

    times: list[float] = []
    recs: list[dict[str, float]] = []
    terrs: list[float] = []
    _record_point(recorder, rho, 0.0, times, recs, terrs, trace_abort)

    use_superop = d * d <= ceiling
    if use_superop:
        liou = liouvillian_matrix(gen, ceiling)
        v = _vec(rho)
        for step in range(1, n_steps + 1):
            k1 = liou @ v
            k2 = liou @ (v + 0.5 * dt * k1)
            k3 = liou @ (v + 0.5 * dt * k2)
            k4 = liou @ (v + dt * k3)
            v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            m = _unvec(v, d)
            m = 0.5 * (m + m.conj().T)
            v = _vec(m)
            if step % stride == 0 or step == n_steps:
                _record_point(recorder, m, step * dt, times, recs, terrs, trace_abort)
        rho = _unvec(v, d)
    else:
        for step in range(1, n_steps + 1):
            k1 = apply_generator(gen, rho)
            k2 = apply_generator(gen, rho + 0.5 * dt * k1)
            k3 = apply_generator(gen, rho + 0.5 * dt * k2)
            k4 = apply_generator(gen, rho + dt * k3)
            rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            rho = 0.5 * (rho + rho.conj().T)
            if step % stride == 0 or step == n_steps:
                _record_point(recorder, rho, step * dt, times, recs, terrs, trace_abort)

    return _pack_trajectory(times, recs, terrs, rho, "rk4", dt)


def _evolve_adaptive(gen, rho, t_final, record_interval, recorder, trace_abort, rtol, atol, ceiling) -> Trajectory:
    d = gen.dim
    n_rec = max(2, int(round(t_final / record_interval)) + 1)
    t_eval = np.linspace(0.0, t_final, n_rec)

    if d * d <= ceiling:
        return _evolve_trapezoid(gen, rho, t_final, t_eval, recorder, trace_abort, rtol, atol, ceiling)

    # above the ceiling: explicit adaptive scheme on the matrix-free form
    def rhs_flat(_t, y):
        m = y.reshape(d, d)
        return apply_generator(gen, m).reshape(-1)

    sol = solve_ivp(rhs_flat, (0.0, t_final), rho.reshape(-1), method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"adaptive integration failed: {sol.message}")
    times, recs, terrs = [], [], []
    for k, t in enumerate(sol.t):
        m = sol.y[:, k].reshape(d, d)
        m = 0.5 * (m + m.conj().T)
        _record_point(recorder, m, float(t), times, recs, terrs, trace_abort)
    rho_fin = 0.5 * (sol.y[:, -1].reshape(d, d) + sol.y[:, -1].reshape(d, d).conj().T)
    return _pack_trajectory(times, recs, terrs, rho_fin, "adaptive", None)


_LU_CACHE_MAX = 4  # factorizations kept alive per run
_MIN_LEVEL = -8
_MAX_LEVEL = 40
_STARTUP_TIME = 500.0  # explicit warm-up horizon before the implicit ladder


def _evolve_trapezoid(gen, rho, t_final, t_eval, recorder, trace_abort, rtol, atol, ceiling) -> Trajectory:
    """Adaptive implicit trapezoid steps with shared LU factorizations.

    The pump dynamics spans five decades of time scales: coherent
    oscillations near the atomic detuning early on, pumping rates of order
    1e-3 late.  Error-controlled implicit stepping handles that spread,
    but during the fast transient a second-order implicit rule at tight
    tolerance is forced to tiny steps where the explicit fixed-step scheme
    is cheaper per unit time; so the run opens with an rk4 warm-up (up to
    t = 500, at most half the horizon) and the implicit ladder takes over
    once dissipation has quieted the fast modes.

    The ladder: step sizes live on a power-of-two grid over the base unit,
    so each rung needs one sparse LU of (I - h/2 L) which is then reused
    for thousands of steps, and the half-step factorization of a rung is
    simply the rung below.  Local error is the scaled max-norm difference
    between one full step and two half steps, over 3 (second-order
    Richardson); accepted states take the two-half-step solution and are
    re-Hermitized.  The extrapolated combination is deliberately NOT
    propagated: its stability function tends to 5/3 for very stiff modes,
    which lets junk accumulate at the tolerance level and pins the step
    size, while plain trapezoid stays A-stable.  The rule preserves the
    trace exactly (the trace functional is a left null vector of L).
    Record times falling inside a step are filled by cubic Hermite
    interpolation, the end derivatives being generator applications.
    """
    d = gen.dim
    liou = liouvillian_matrix(gen, ceiling).tocsc()
    n = liou.shape[0]
    ident = sp.identity(n, dtype=complex, format="csc")

    n_units = max(1, int(round(t_final / DEFAULT_DT)))
    unit = t_final / n_units

    lus: OrderedDict[int, spla.SuperLU] = OrderedDict()

    def lu_for(level: int):
        if level in lus:
            lus.move_to_end(level)
            return lus[level]
        h = unit * (2.0 ** level)
        fact = spla.splu((ident - (h / 2.0) * liou).tocsc(), permc_spec="MMD_AT_PLUS_A")
        lus[level] = fact
        while len(lus) > _LU_CACHE_MAX:
            lus.popitem(last=False)
        return fact

    def tr_step(y: np.ndarray, level: int) -> np.ndarray:
        h = unit * (2.0 ** level)
        return lu_for(level).solve(y + (h / 2.0) * (liou @ y))

    def hermitized(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = _unvec(y, d)
        m = 0.5 * (m + m.conj().T)
        return _vec(m), m

    times: list[float] = []
    recs: list[dict[str, float]] = []
    terrs: list[float] = []
    y, m = hermitized(_vec(rho))
    if t_eval[0] <= 0.0:
        _record_point(recorder, m, 0.0, times, recs, terrs, trace_abort)
    rec_queue = deque(float(t) for t in t_eval if t > 0.0)
    t_tol = 1e-9 * max(t_final, 1.0)

    def consume_records(t_prev, t_now, y_prev, f_prev, y_now, f_now, m_now):
        h = t_now - t_prev
        while rec_queue and rec_queue[0] <= t_now + t_tol:
            tau = rec_queue.popleft()
            theta = (tau - t_prev) / h
            if theta >= 1.0 - 1e-12:
                m_rec = m_now
            else:
                mr = _unvec(_hermite_point(y_prev, f_prev, y_now, f_now, h, theta), d)
                m_rec = 0.5 * (mr + mr.conj().T)
            _record_point(recorder, m_rec, tau, times, recs, terrs, trace_abort)

    t_units = 0
    f_left = liou @ y

    warm_units = min(n_units // 2, int(round(_STARTUP_TIME / unit)))
    while t_units < warm_units:
        k1 = f_left
        k2 = liou @ (y + 0.5 * unit * k1)
        k3 = liou @ (y + 0.5 * unit * k2)
        k4 = liou @ (y + unit * k3)
        y_new, m_new = hermitized(y + (unit / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        f_right = liou @ y_new
        t_units += 1
        consume_records((t_units - 1) * unit, t_units * unit, y, k1, y_new, f_right, m_new)
        y, m, f_left = y_new, m_new, f_right

    level = 0
    calm = 0
    while t_units < n_units:
        while 2 ** level > n_units - t_units:
            level -= 1
        y1 = tr_step(y, level)
        yh = tr_step(tr_step(y, level - 1), level - 1)
        # error per unit state norm: components far below the norm are not
        # allowed to pin the step, the dominant ones are controlled to rtol
        scale = atol + rtol * max(float(np.max(np.abs(y1))), float(np.max(np.abs(yh))))
        err = float(np.max(np.abs(y1 - yh))) / scale / 3.0
        if err > 1.0 and level > _MIN_LEVEL:
            level -= 1
            calm = 0
            continue

        y_new, m_new = hermitized(yh)
        f_right = liou @ y_new
        t_prev = t_units * unit
        t_units += 2 ** level
        consume_records(t_prev, t_units * unit, y, f_left, y_new, f_right, m_new)

        y, m, f_left = y_new, m_new, f_right
        calm += 1
        if err < 0.1 and calm >= 1 and level < _MAX_LEVEL:
            level += 1
            calm = 0

    return _pack_trajectory(times, recs, terrs, _unvec(y, d), "adaptive", None)


def _hermite_point(y0, f0, y1, f1, h: float, theta: float) -> np.ndarray:
    """Cubic Hermite value at fraction ``theta`` of a step of width ``h``."""
    t2 = theta * theta
    t3 = t2 * theta
    return (
        (1.0 - 3.0 * t2 + 2.0 * t3) * y0
        + (3.0 * t2 - 2.0 * t3) * y1
        + h * ((theta - 2.0 * t2 + t3) * f0 + (t3 - t2) * f1)
    )


@dataclass
class SteadyStateResult:
    rho: DensityMatrix
    method: str
    residual: float
    info: dict


def steady_state(
    gen: LindbladGenerator,
    method: str = "auto",
    *,
    residual_tol: float = 1e-8,
    long_time_tol: float = 1e-9,
    superop_ceiling: int = SUPEROP_CEILING,
    rho0: np.ndarray | None = None,
) -> SteadyStateResult:
    """Stationary state of the generator.

    method = "null_space": direct sparse solve of L vec(rho) = 0 with the
    trace pinned to one.  A generator with a multidimensional steady-state
    manifold makes that linear system singular, which is reported as
    :class:`DegenerateSteadyStateError` rather than silently averaged over.

    method = "long_time": integrate until the state stops moving
    (max-norm change per unit time below ``long_time_tol``).

    method = "auto": null_space when the superoperator is materializable,
    long_time otherwise.
    """
    d = gen.dim
    if method == "auto":
        method = "null_space" if d * d <= superop_ceiling else "long_time"

    if method == "null_space":
        return _steady_null_space(gen, residual_tol, superop_ceiling)
    if method == "long_time":
        return _steady_long_time(gen, long_time_tol, rho0)
    raise ValueError(f"unknown steady-state method {method!r}")


def _steady_null_space(gen, residual_tol, ceiling) -> SteadyStateResult:
    d = gen.dim
    liou = liouvillian_matrix(gen, ceiling)
    scale = max(float(np.max(np.abs(liou.data))) if liou.nnz else 1.0, 1e-12)

    # replace the first row (a diagonal position of vec) with the trace row;
    # trace preservation makes the original rows linearly dependent, so this
    # restores full rank exactly when the steady state is unique
    a = liou.tolil()
    trace_cols = [k * (d + 1) for k in range(d)]
    a[0, :] = 0.0
    for c in trace_cols:
        a[0, c] = scale
    a = a.tocsc()
    b = np.zeros(d * d, dtype=complex)
    b[0] = scale

    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            lu = spla.splu(a, permc_spec="MMD_AT_PLUS_A")
            x = lu.solve(b)
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise DegenerateSteadyStateError(
                "the trace-pinned steady-state system is singular; the generator has "
                "more than one stationary state (or none reachable), refusing to pick one"
            ) from exc
    if not np.all(np.isfinite(x)):
        raise DegenerateSteadyStateError("steady-state solve produced non-finite entries; degenerate generator")

    rho = _unvec(x, d)
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.real(np.trace(rho))
    if abs(tr) < 1e-12:
        raise DegenerateSteadyStateError("steady-state solve returned a traceless solution")
    rho = rho / tr
    residual = float(np.max(np.abs(liou @ _vec(rho))))
    if residual > residual_tol:
        raise RuntimeError(f"steady-state residual {residual:.3e} exceeds {residual_tol:.1e}")
    # a degenerate generator can slip past the pinned LU with a perfectly
    # stationary but indefinite combination of stationary elements; a unique
    # steady state is positive, so indefiniteness proves non-uniqueness
    eig_min = float(np.linalg.eigvalsh(rho).min())
    if eig_min < -1e-7:
        raise DegenerateSteadyStateError(
            f"stationary solution is indefinite (min eigenvalue {eig_min:.3e}); the "
            "generator has more than one stationary state, refusing to pick one"
        )
    dm = DensityMatrix(rho)
    return SteadyStateResult(rho=dm, method="null_space", residual=residual, info={"dim": d})


def _steady_long_time(gen, tol, rho0) -> SteadyStateResult:
    d = gen.dim
    if rho0 is None:
        rho = np.eye(d, dtype=complex) / d
    else:
        rho = np.array(rho0, dtype=complex)
    chunk = 200.0
    t_total = 0.0
    max_chunks = 500
    for _ in range(max_chunks):
        traj = evolve(gen, rho, chunk, method="rk4", record_interval=chunk, recorder=lambda r: {})
        new = traj.final.array
        rate = float(np.max(np.abs(new - rho))) / chunk
        rho = new
        t_total += chunk
        if rate <= tol:
            residual = float(np.max(np.abs(apply_generator(gen, rho))))
            if residual > 1e-6:
                raise RuntimeError(f"long-time steady state residual {residual:.3e} exceeds 1e-6")
            return SteadyStateResult(
                rho=DensityMatrix(rho),
                method="long_time",
                residual=residual,
                info={"t_reached": t_total, "rate": rate},
            )
    raise RuntimeError(f"long-time evolution did not settle within t = {t_total:.3g}")


# -- population bookkeeping -------------------------------------------------

_REDUCE_CACHE: dict[int, tuple] = {}


def _reduction_tables(space: CompositeSpace, layout: ModeLayout):
    """Index tables for tracing out everything but the two atoms."""
    key = id(space)
    cached = _REDUCE_CACHE.get(key)
    if cached is not None and cached[0] is space:
        return cached[1]
    groups: dict[tuple, list[tuple[int, int, int]]] = {}
    for k, multi in enumerate(space.basis):
        fields = tuple(multi[f] for f in range(space.n_subsystems) if f not in (layout.atom1, layout.atom2))
        a = multi[layout.atom1] * 3 + multi[layout.atom2]
        groups.setdefault(fields, []).append((a, k))
    tables = []
    for members in groups.values():
        idx = np.array([k for (_a, k) in members])
        ats = np.array([a for (a, _k) in members])
        tables.append((ats, idx))
    _REDUCE_CACHE[key] = (space, tables)
    return tables


def reduced_atom_matrix(rho: np.ndarray | DensityMatrix, space: CompositeSpace, layout: ModeLayout) -> np.ndarray:
    """Partial trace over all field modes; 9x9 on the (atom1, atom2) levels."""
    r = rho.array if isinstance(rho, DensityMatrix) else rho
    out = np.zeros((9, 9), dtype=complex)
    for ats, idx in _reduction_tables(space, layout):
        block = r[np.ix_(idx, idx)]
        np.add.at(out, (ats[:, None], ats[None, :]), block)
    return out


_S_VEC = np.zeros(9, dtype=complex)
_S_VEC[1 * 3 + 0] = 1.0 / math.sqrt(2.0)  # |10>
_S_VEC[0 * 3 + 1] = -1.0 / math.sqrt(2.0)  # |01>
_T_VEC = np.zeros(9, dtype=complex)
_T_VEC[1 * 3 + 0] = 1.0 / math.sqrt(2.0)
_T_VEC[0 * 3 + 1] = 1.0 / math.sqrt(2.0)


def atomic_populations(rho: np.ndarray | DensityMatrix, space: CompositeSpace, layout: ModeLayout) -> dict[str, float]:
    """P00, PS, PT, P11 on the atomic ground manifold plus the leak.

    ``leak`` is everything outside the four ground-manifold populations:
    excited-level weight and any residual field excitation correlations.
    """
    red = reduced_atom_matrix(rho, space, layout)
    p00 = float(np.real(red[0, 0]))
    p11 = float(np.real(red[4, 4]))  # |11> = index 1*3+1
    ps = float(np.real(_S_VEC.conj() @ red @ _S_VEC))
    pt = float(np.real(_T_VEC.conj() @ red @ _T_VEC))
    leak = float(np.real(np.trace(red))) - (p00 + ps + pt + p11)
    return {"P00": p00, "PS": ps, "PT": pt, "P11": p11, "leak": leak}
