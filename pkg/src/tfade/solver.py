"""Fully discrete Crank-Nicolson-type marching scheme.

Each step solves one tridiagonal system for the new interior values: the
half-time-level collocation puts (U^{n+1} - U^n)/tau_{n+1}, the implicit half
of the centered space operators and the local fractional coefficient B on the
left, everything known (explicit local term, compressed or exact history
bracket, forcing at tbar_n) on the right.  The left-hand matrix has
eigenvalues bounded below by 1/tau_{n+1} + B > 0, so the Thomas algorithm
never breaks down for valid grids.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from tfade.mesh import SpatialGrid, TemporalMesh, graded_mesh, soe_interval, uniform_grid
from tfade.operators import (
    HistoryState,
    StepWeights,
    history_advance,
    lambda_tables,
    step_weights,
)
from tfade.problems import l2_norm
from tfade.soe import SOEApprox, build_soe, gamma_fn, gauss_legendre

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # numba is optional; the NumPy path is the reference
    HAVE_NUMBA = False

__all__ = [
    "MarchState",
    "SchemeConfig",
    "SolveError",
    "Trajectory",
    "TridiagonalSystem",
    "assemble_step",
    "run",
    "stability_probe",
    "thomas_solve",
]

# keep every time level in the trajectory as long as the table stays this small
_SNAPSHOT_BUDGET = 10_000_000


class SolveError(RuntimeError):
    """Numerical breakdown (NaN/Inf or pivot failure) during a march."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SchemeConfig:
    """Problem plus discretization parameters for one run.

    ``method`` selects the history treatment: "fast" (exponential-sum
    recurrence) or "direct" (exact-kernel quadrature, quadratic cost).  A
    too-large final step, tau_max^(2-2 alpha) >= 1/3, voids the sufficient
    stability condition; that only triggers a warning since the condition is
    not necessary.
    """

    alpha: float
    lam: float
    M: int
    N: int
    T: float = 2.0
    L: float = 1.0
    r: float = 3.0
    epsilon: float = 1e-10
    method: str = "fast"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam!r}")
        if not self.T > 0 or not self.L > 0:
            raise ValueError("T and L must be positive")
        if self.M < 2 or self.N < 2:
            raise ValueError("M and N must be >= 2")
        if self.r < 1.0:
            raise ValueError(f"grading exponent r must be >= 1, got {self.r!r}")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        if self.method not in ("fast", "direct"):
            raise ValueError(f"method must be 'fast' or 'direct', got {self.method!r}")
        tau_max = self.T * (1.0 - ((self.N - 1) / self.N) ** self.r)
        if tau_max ** (2.0 - 2.0 * self.alpha) >= 1.0 / 3.0:
            warnings.warn(
                f"largest step violates the sufficient stability condition: "
                f"tau_max^(2-2 alpha) = {tau_max ** (2 - 2 * self.alpha):.4f} >= 1/3 "
                f"(N={self.N}, r={self.r}); proceeding, the bound is not necessary",
                RuntimeWarning,
                stacklevel=2,
            )


@dataclass
class TridiagonalSystem:
    """One step's linear system; lower[0] and upper[-1] are ignored."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray


def thomas_solve(sys: TridiagonalSystem) -> np.ndarray:
    """Forward elimination / back substitution for a tridiagonal system.

    Raises SolveError on pivot breakdown; never triggered by the scheme's
    matrices, whose eigenvalues stay above 1/tau + B > 0.
    """
    lower = sys.lower.tolist()
    diag = sys.diag.tolist()
    upper = sys.upper.tolist()
    rhs = sys.rhs.tolist()
    m = len(diag)
    cp = [0.0] * m
    dp = [0.0] * m
    beta = diag[0]
    if not abs(beta) > 0.0:
        raise SolveError("pivot breakdown at row 0")
    cp[0] = upper[0] / beta
    dp[0] = rhs[0] / beta
    for k in range(1, m):
        beta = diag[k] - lower[k] * cp[k - 1]
        if not abs(beta) > 0.0:
            raise SolveError(f"pivot breakdown at row {k}")
        cp[k] = upper[k] / beta
        dp[k] = (rhs[k] - lower[k] * dp[k - 1]) / beta
    x = dp
    for k in range(m - 2, -1, -1):
        x[k] = dp[k] - cp[k] * x[k + 1]
    return np.asarray(x)


@dataclass
class Trajectory:
    """Result of one march; snapshots hold interior vectors keyed by level.

    Boundary values are identically zero at every level; levels are all
    retained unless M*N exceeds the snapshot budget, in which case they are
    strided with the final level always kept.
    """

    config: SchemeConfig
    mesh: TemporalMesh
    grid: SpatialGrid
    snapshots: dict[int, np.ndarray]
    wall_time: float
    n_exp_used: int

    def full_level(self, n: int) -> np.ndarray:
        """Solution at level n including the zero boundary values."""
        return np.concatenate(([0.0], self.snapshots[n], [0.0]))


@dataclass
class MarchState:
    """Everything `assemble_step` needs: grids, retained levels, history.

    ``levels`` is the (N+1, M-1) table of interior values filled row by row
    as the march proceeds.  The trailing fields are per-run scratch buffers;
    they make each assembly allocation-free, which matters once the step
    count reaches the thousands.
    """

    config: SchemeConfig
    mesh: TemporalMesh
    grid: SpatialGrid
    levels: np.ndarray
    soe: SOEApprox | None = None
    hist: HistoryState | None = None
    # static per-interval quadrature tables for the direct method
    quad_s: np.ndarray | None = None
    quad_w1: np.ndarray | None = None
    quad_ratio: np.ndarray | None = None
    _pad: np.ndarray | None = None
    _tmp: np.ndarray | None = None

    def scratch(self) -> tuple[np.ndarray, np.ndarray]:
        if self._pad is None:
            self._pad = np.zeros(self.grid.M + 1)
            self._tmp = np.empty(self.grid.M - 1)
        return self._pad, self._tmp


def _direct_tables(mesh: TemporalMesh, n_nodes: int = 32):
    """Per-interval Gauss nodes and hat-weighted quadrature weights.

    quad_s[k-1] holds the nodes on [t_{k-1}, t_k]; quad_w1 the weights
    premultiplied by the right-hat values, quad_ratio the left/right hat
    ratio (finite: Gauss nodes never touch the interval ends), so a step
    only evaluates the kernel at tbar_n - s and contracts twice.
    """
    rule = gauss_legendre(n_nodes)
    t0 = mesh.t[:-1]
    tau = mesh.tau
    half = 0.5 * tau
    s = (t0 + half)[:, None] + half[:, None] * rule.nodes[None, :]
    wq = half[:, None] * rule.weights[None, :]
    hat_r = (s - t0[:, None]) / tau[:, None]
    return s, wq * hat_r, (1.0 - hat_r) / hat_r


def _explicit_part(state: MarchState, w: StepWeights, n: int) -> np.ndarray:
    """Vectorized explicit operator part E over interior points."""
    cfg = state.config
    u_n = state.levels[n]
    u_0 = state.levels[0]
    if cfg.method == "fast":
        hist = state.hist.H @ w.omega if w.omega.size else 0.0
        bracket = w.alpha * hist + w.bndry * u_0
    else:
        if n >= 1:
            v = state.mesh.tbar[n] - state.quad_s[:n]
            kern = np.exp(-cfg.lam * v)
            kern *= v ** (-1.0 - cfg.alpha)
            kern *= state.quad_w1[:n]
            a = kern.sum(axis=1)
            kern *= state.quad_ratio[:n]
            b = kern.sum(axis=1)
            hist = a @ state.levels[1 : n + 1]
            hist += b @ state.levels[:n]
            hist *= cfg.alpha
        else:
            hist = 0.0
        bracket = hist + w.bndry * u_0
    return w.c_expl * u_n - w.inv_gamma1 * bracket


def assemble_step(
    state: MarchState, w: StepWeights, f_bar: np.ndarray, n: int
) -> TridiagonalSystem:
    """Build the step-n tridiagonal system for the interior unknowns.

    Row j of the left side reads
        (-1/(2h^2) + 1/(4h)) U_{j+1} + (1/tau + B + 1/h^2) U_j
        + (-1/(2h^2) - 1/(4h)) U_{j-1},
    the right side carries the explicit halves of the space operators, the
    explicit operator part and the forcing at the half level.
    """
    h = state.grid.h
    m = state.grid.M - 1
    tau = float(state.mesh.tau[n])
    inv_h2 = 1.0 / (h * h)
    inv_4h = 1.0 / (4.0 * h)
    lower = np.full(m, -0.5 * inv_h2 - inv_4h)
    upper = np.full(m, -0.5 * inv_h2 + inv_4h)
    diag = np.full(m, 1.0 / tau + w.B + inv_h2)
    u_n = state.levels[n]
    pad, tmp = state.scratch()
    pad[1:-1] = u_n
    up, dn = pad[2:], pad[:-2]
    # rhs = u_n/tau + (delta_xx - delta_x)(u_n)/2 - E + f_bar, with the
    # space stencils folded into the three neighbor coefficients
    rhs = np.multiply(up, 0.5 * inv_h2 - inv_4h)
    rhs += np.multiply(dn, 0.5 * inv_h2 + inv_4h, out=tmp)
    rhs += np.multiply(u_n, 1.0 / tau - inv_h2, out=tmp)
    rhs -= _explicit_part(state, w, n)
    rhs += f_bar
    return TridiagonalSystem(lower=lower, diag=diag, upper=upper, rhs=rhs)


def _coerce_problem(problem) -> tuple[Callable, Callable]:
    if hasattr(problem, "phi") and hasattr(problem, "forcing"):
        return problem.phi, problem.forcing
    if isinstance(problem, dict):
        return problem["phi"], problem["f"]
    phi, f = problem
    return phi, f


if HAVE_NUMBA:

    @njit(cache=True)
    def _direct_march_jit(
        levels, quad_s, quad_w1, quad_ratio, tbar, tau,
        b_arr, ce_arr, bnd_arr, f_table, alpha, lam, inv_g1, h
    ):  # pragma: no cover - exercised via run(); equivalence-tested vs NumPy path
        n_steps = levels.shape[0] - 1
        m = levels.shape[1]
        q = quad_s.shape[1]
        inv_h2 = 1.0 / (h * h)
        inv_4h = 1.0 / (4.0 * h)
        lo_c = -0.5 * inv_h2 - inv_4h
        up_c = -0.5 * inv_h2 + inv_4h
        ku = 0.5 * inv_h2 - inv_4h
        kd = 0.5 * inv_h2 + inv_4h
        p = -1.0 - alpha
        cp = np.empty(m)
        dp = np.empty(m)
        hist = np.empty(m)
        rhs = np.empty(m)
        a_k = np.empty(n_steps)
        b_k = np.empty(n_steps)
        for n in range(n_steps):
            tn = tau[n]
            diag = 1.0 / tn + b_arr[n] + inv_h2
            for i in range(m):
                hist[i] = 0.0
            if n >= 1:
                tb = tbar[n]
                for k in range(n):
                    sa = 0.0
                    sb = 0.0
                    for j in range(q):
                        v = tb - quad_s[k, j]
                        kern = np.exp(-lam * v) * v**p
                        wk = quad_w1[k, j] * kern
                        sa += wk
                        sb += wk * quad_ratio[k, j]
                    a_k[k] = alpha * sa
                    b_k[k] = alpha * sb
                for k in range(n):
                    av = a_k[k]
                    bv = b_k[k]
                    for i in range(m):
                        hist[i] += av * levels[k + 1, i] + bv * levels[k, i]
            kc = 1.0 / tn - inv_h2
            for i in range(m):
                upv = levels[n, i + 1] if i + 1 < m else 0.0
                dnv = levels[n, i - 1] if i >= 1 else 0.0
                e_i = ce_arr[n] * levels[n, i] - inv_g1 * (
                    hist[i] + bnd_arr[n] * levels[0, i]
                )
                rhs[i] = upv * ku + dnv * kd + levels[n, i] * kc - e_i + f_table[n, i]
            beta = diag
            if not abs(beta) > 0.0:
                return n
            cp[0] = up_c / beta
            dp[0] = rhs[0] / beta
            for i in range(1, m):
                beta = diag - lo_c * cp[i - 1]
                if not abs(beta) > 0.0:
                    return n
                cp[i] = up_c / beta
                dp[i] = (rhs[i] - lo_c * dp[i - 1]) / beta
            levels[n + 1, m - 1] = dp[m - 1]
            for i in range(m - 2, -1, -1):
                dp[i] = dp[i] - cp[i] * dp[i + 1]
                levels[n + 1, i] = dp[i]
        return -1


def _forcing_table(f: Callable, xi: np.ndarray, tbar: np.ndarray) -> np.ndarray:
    """Evaluate f at all (x_j, tbar_n) as an (N, M-1) table.

    Tries one broadcast evaluation first; falls back to a per-step loop for
    callables that do not vectorize over both arguments.
    """
    n_steps, m = len(tbar), len(xi)
    try:
        table = np.asarray(f(xi[None, :], tbar[:, None]), dtype=float)
        if table.shape == (n_steps, m):
            return table
    except Exception:
        pass
    table = np.empty((n_steps, m))
    for n, t in enumerate(tbar):
        table[n] = np.broadcast_to(np.asarray(f(xi, t), dtype=float), (m,))
    return table


def run(config: SchemeConfig, problem) -> Trajectory:
    """March the scheme from t = 0 to t = T.

    ``problem`` is a ManufacturedCase, a (phi, f) pair or a {"phi", "f"}
    dict; both callables must be vectorized (phi over x, f over (x, t)).
    History bookkeeping: before assembling step n >= 1 the accumulators are
    advanced with (U^n, U^{n-1}), which re-references them to tbar_n;
    step 0 has no history term.
    """
    start = time.perf_counter()
    mesh = graded_mesh(config.T, config.N, config.r)
    grid = uniform_grid(config.L, config.M)
    xi = grid.x_interior
    phi, f = _coerce_problem(problem)

    levels = np.empty((config.N + 1, config.M - 1))
    levels[0] = np.asarray(phi(xi), dtype=float)
    state = MarchState(config=config, mesh=mesh, grid=grid, levels=levels)
    f_table = _forcing_table(f, xi, mesh.tbar)

    # per-step scalar coefficients, one vectorized pass
    alpha, lam = config.alpha, config.lam
    b_arr = mesh.tau ** (-alpha) / (2.0 ** (1.0 - alpha) * gamma_fn(2.0 - alpha))
    ce_arr = (1.0 - 2.0 * alpha * np.exp(-lam * mesh.tau / 2.0)) * b_arr
    bnd_arr = np.exp(-lam * mesh.tbar) * mesh.tbar ** (-alpha)
    inv_g1 = 1.0 / gamma_fn(1.0 - alpha)

    n_exp_used = 0
    if config.method == "fast":
        t_lo, t_hi = soe_interval(mesh)
        state.soe = build_soe(alpha, config.epsilon, t_lo, t_hi)
        n_exp_used = state.soe.n_exp
        state.hist = HistoryState(H=np.zeros((config.M - 1, n_exp_used)), n_last=0)
        lam1_t, lam2_t, decay_t = lambda_tables(mesh, state.soe, lam)
        omega = state.soe.weights
        for n in range(config.N):
            w = StepWeights(
                n=n, alpha=alpha, lam=lam,
                lam1=lam1_t[n], lam2=lam2_t[n], decay=decay_t[n],
                B=float(b_arr[n]), c_expl=float(ce_arr[n]), bndry=float(bnd_arr[n]),
                omega=omega, inv_gamma1=inv_g1,
            )
            if n >= 1:
                history_advance(state.hist, levels[n], levels[n - 1], w, n)
            system = assemble_step(state, w, f_table[n], n)
            try:
                u_next = thomas_solve(system)
            except SolveError as exc:
                raise SolveError(f"{exc} while solving step {n}", step=n) from exc
            if not np.all(np.isfinite(u_next)):
                raise SolveError(f"non-finite solution at step {n}", step=n)
            levels[n + 1] = u_next
    else:
        state.quad_s, state.quad_w1, state.quad_ratio = _direct_tables(mesh)
        if HAVE_NUMBA:
            bad = _direct_march_jit(
                levels, state.quad_s, state.quad_w1, state.quad_ratio,
                mesh.tbar, mesh.tau, b_arr, ce_arr, bnd_arr, f_table,
                float(alpha), float(lam), inv_g1, grid.h,
            )
            if bad >= 0:
                raise SolveError(f"pivot breakdown while solving step {bad}", step=bad)
        else:
            for n in range(config.N):
                w = step_weights(mesh, None, lam, alpha, n)
                system = assemble_step(state, w, f_table[n], n)
                try:
                    u_next = thomas_solve(system)
                except SolveError as exc:
                    raise SolveError(f"{exc} while solving step {n}", step=n) from exc
                levels[n + 1] = u_next
        if not np.all(np.isfinite(levels)):
            first_bad = int(np.argmin(np.all(np.isfinite(levels), axis=1)))
            raise SolveError(
                f"non-finite solution at step {first_bad - 1}", step=first_bad - 1
            )

    wall = time.perf_counter() - start
    total = (config.M - 1) * (config.N + 1)
    if total <= _SNAPSHOT_BUDGET:
        snapshots = {n: levels[n] for n in range(config.N + 1)}
    else:
        stride = -(-total // _SNAPSHOT_BUDGET)
        snapshots = {n: levels[n] for n in range(0, config.N + 1, stride)}
        snapshots[config.N] = levels[config.N]
    return Trajectory(
        config=config,
        mesh=mesh,
        grid=grid,
        snapshots=snapshots,
        wall_time=wall,
        n_exp_used=n_exp_used,
    )


def stability_probe(config: SchemeConfig, phi_a, phi_b, f) -> dict[str, float]:
    """Ratio of perturbation growth for two initial data under identical f.

    Returns {"max_ratio": max_n ||U^n_a - U^n_b|| / ||U^0_a - U^0_b||} in the
    discrete L2 norm; the scheme's stability bound says this never exceeds 1.
    """
    grid = uniform_grid(config.L, config.M)
    xi = grid.x_interior
    d0 = l2_norm(
        np.asarray(phi_a(xi), dtype=float) - np.asarray(phi_b(xi), dtype=float),
        grid.h,
    )
    if d0 == 0.0:
        raise ValueError("stability_probe requires phi_a != phi_b on the grid")
    traj_a = run(config, (phi_a, f))
    traj_b = run(config, (phi_b, f))
    worst = 0.0
    for n, ua in traj_a.snapshots.items():
        if n == 0:
            continue
        worst = max(worst, l2_norm(ua - traj_b.snapshots[n], grid.h) / d0)
    return {"max_ratio": worst}
