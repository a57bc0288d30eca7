"""Geodesics of the v_m-metric and the inverse v_m-flow, with monitors.

The discrete v_m-metric is the diagonal quadratic form

    G_u(phi, psi) = sum_j phi_j psi_j M_j(u),
    M_j(u) = omega h sin^{n-1}(theta_j) e^{-n u_j} v_m[u]_j,

with smooth (trapezoid) node masses; poles carry zero measure.  Geodesics
are integrated as the exact Euler-Lagrange system of L = G_u(udot, udot)/2
restricted to the smooth rotationally symmetric Galerkin subspace spanned
by cos(k theta), k = 0..modes-1.  Two structural facts make this the
right discretization:

  * M_j(u + c) = M_j(u) identically -- the Euler identity for sigma_m
    makes the Jacobian row sums vanish -- and the constant function lies
    in the subspace, so the splitting momentum G_u(udot, 1) and the speed
    G_u(udot, udot) are conserved exactly by the semi-discrete flow
    (Noether + energy); the observed drift is pure O(dt^4) Runge-Kutta.

  * Working per node instead would couple the dynamics to the
    measure-degenerate pole neighborhood (masses ~ h^n against O(h^2)
    force asymmetries), which injects a spurious stiff mode; projecting
    the force onto smooth modes removes it.

  * The dynamical masses are normalized by the conserved total,
    Mtilde_j = M_j * vhat / sum_k M_k with vhat the round-sphere total:
    an O(h^2)-equal discretization of the same metric under which
    sum_j Mtilde_j is *exactly* constant in u.  Both the row sums and the
    column sums of its Jacobian then vanish identically, so scaling rays
    u_0 + c t are exact geodesics of the discrete system (machine-zero
    force), not just O(h^2)-approximate ones.  Measured quantities
    (v_m, total_v, volumes) are never normalized -- only the dynamics.

The pointwise continuum form v_m^{-1} l_rad e^{2u} (dw/dtheta)^2 is
exposed as `geodesic_rhs` and agrees with the variational acceleration to
O(h^2) away from the poles.

The inverse v_m-flow du/dt = 1 - vbar / v_m is the negative gradient flow
of F; it is stepped explicitly (RK4, per node -- its parabolic character
needs no mass matrix) under the diffusion-style bound

    dt = c_cfl h^2 min_j v_m^2 / (vbar max(l_rad, l_tan) e^{2u}),

with vbar recomputed at every stage, stopping at time T or at
stationarity sup |1 - vbar / v_m| <= stat_tol.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import functionals as fn
from .errors import ConeError, ConvergenceError, StiffnessError
from .sphere import (
    GeometryState,
    SphereConfig,
    cone_margins,
    derivatives,
    flux_pairing,
    geometry_state,
    in_cone_Cm,
)

# Monotonicity tolerances are max(EPS_TOL_FLOOR, EPS_TOL_C * (h^2 + dt^2));
# the constant is calibrated on round-sphere runs, where every monitored
# quantity is exactly stationary (see tests/test_flows.py).
EPS_TOL_FLOOR = 1e-6
EPS_TOL_C = 10.0

DEFAULT_MODES = 32

TRACE_CSV_COLUMNS = ("t", "F", "momentum", "speed2", "entropy", "min_vm", "min_L", "dt")


def monotone_tolerance(cfg: SphereConfig, dt: float) -> float:
    return max(EPS_TOL_FLOOR, EPS_TOL_C * (cfg.h**2 + dt**2))


@dataclass
class MonitorTrace:
    """Time series of the conserved/monotone quantities."""

    t: list = field(default_factory=list)
    F: list = field(default_factory=list)
    momentum: list = field(default_factory=list)
    speed2: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    min_vm: list = field(default_factory=list)
    min_L: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    # analytic entropy production -vbar int v_m <L, grad(1/v_m)^2> dV
    ent_rhs: list = field(default_factory=list)
    # flow stationarity residual sup |1 - vbar/v_m|
    residual: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(TRACE_CSV_COLUMNS) + "\n")
        for row in zip(
            self.t, self.F, self.momentum, self.speed2,
            self.entropy, self.min_vm, self.min_L, self.dt,
        ):
            buf.write(",".join(f"{x:.17g}" for x in row) + "\n")
        return buf.getvalue()


@dataclass
class PathState:
    t: float
    u: np.ndarray
    w: np.ndarray
    dt: float
    geometry: GeometryState


@dataclass
class TrajectoryResult:
    ts: np.ndarray
    us: np.ndarray  # (samples, N)
    ws: np.ndarray | None
    trace: MonitorTrace
    status: str  # 'ok' | 'cone_exit' | 'stationary'
    t_exit: float | None = None
    projection_defect: float = 0.0

    @property
    def final_u(self) -> np.ndarray:
        return self.us[-1]


def metric_density(state: GeometryState) -> np.ndarray:
    """Raw node masses of the v_m-metric (zero at the poles)."""
    return state.mass * state.vm


def metric_inner(state: GeometryState, a: np.ndarray, b: np.ndarray) -> float:
    """<a, b>_u in the normalized dynamical metric."""
    metric = _DynamicMetric(state.cfg, state)
    return float(np.sum(metric.density * a * b))


def metric_jacobian_bands(state: GeometryState):
    """Bands (lo, di, up) of dM_k/du_j, j = k-1, k, k+1; pole rows zero.

    Row sums vanish identically: the stencil coefficients cancel and the
    diagonal terms cancel through 2(l_rad a_rad + (n-1) l_tan a_tan) =
    n v_m, the Euler identity.  This is what makes the splitting momentum
    an exact invariant of the discrete geodesic flow.
    """
    cfg = state.cfg
    n, h = cfg.n, cfg.h
    e2u, du = state.e2u, state.du
    lr, lt = state.l_rad, (n - 1.0) * state.l_tan
    inv_h2 = 1.0 / (h * h)
    inv_2h = 0.5 / h

    d_vm_c = lr * (2.0 * state.a_rad - 2.0 * e2u * inv_h2) + lt * 2.0 * state.a_tan
    cot_du = (cfg.cot - du) * inv_2h
    d_vm_p = lr * e2u * (inv_h2 + du * inv_2h) + lt * e2u * cot_du
    d_vm_m = lr * e2u * (inv_h2 - du * inv_2h) - lt * e2u * cot_du

    lo = state.mass * d_vm_m
    di = state.mass * (d_vm_c - n * state.vm)
    up = state.mass * d_vm_p
    lo[0] = di[0] = up[0] = 0.0
    lo[-1] = di[-1] = up[-1] = 0.0
    return lo, di, up


def _jmatvec(bands, x: np.ndarray) -> np.ndarray:
    """(J x)_k = sum_j dM_k/du_j x_j."""
    lo, di, up = bands
    y = di * x
    y[1:-1] += lo[1:-1] * x[:-2] + up[1:-1] * x[2:]
    return y


def _jtmatvec(bands, r: np.ndarray) -> np.ndarray:
    """(J^T r)_j = sum_k dM_k/du_j r_k."""
    lo, di, up = bands
    z = di * r
    z[:-2] += lo[1:-1] * r[1:-1]
    z[2:] += up[1:-1] * r[1:-1]
    return z


def _metric_total_round(cfg: SphereConfig) -> float:
    """Trapezoid-mass total of v_m at u = 0 (the normalization vhat)."""
    if "_metric_total_round" not in cfg.__dict__:
        state = geometry_state(cfg, np.zeros(cfg.N))
        cfg.__dict__["_metric_total_round"] = float(np.sum(metric_density(state)))
    return cfg.__dict__["_metric_total_round"]


class _DynamicMetric:
    """Normalized metric density Mtilde = M vhat / S and its Jacobian action.

    With S(u) = sum_k M_k, the Jacobian is
    Jtilde = (vhat/S) J - (vhat/S^2) M (grad S)^T, grad S = J^T 1.
    Row sums vanish because J's do and grad S . 1 = 0 (translation
    invariance of S); column sums vanish because J^T 1 = grad S cancels
    against the rank-one term.  Hence exact momentum/energy conservation
    and exact scaling-ray geodesics.
    """

    def __init__(self, cfg: SphereConfig, state: GeometryState):
        self.density_raw = metric_density(state)
        self.S = float(np.sum(self.density_raw))
        self.vhat = _metric_total_round(cfg)
        self.scale = self.vhat / self.S
        self.density = self.density_raw * self.scale
        self.bands = metric_jacobian_bands(state)
        lo, di, up = self.bands
        grad_s = di.copy()
        grad_s[:-1] += lo[1:]
        grad_s[1:] += up[:-1]
        self.grad_s = grad_s

    def jmatvec(self, x: np.ndarray) -> np.ndarray:
        return self.scale * (
            _jmatvec(self.bands, x)
            - self.density_raw * (float(self.grad_s @ x) / self.S)
        )

    def jtmatvec(self, r: np.ndarray) -> np.ndarray:
        return self.scale * (
            _jtmatvec(self.bands, r)
            - self.grad_s * (float(self.density_raw @ r) / self.S)
        )


def mode_basis(cfg: SphereConfig, modes: int) -> np.ndarray:
    """Columns cos(k theta), k = 0..modes-1, on the grid (cached on cfg)."""
    if modes < 2 or modes > cfg.N // 2:
        raise ValueError("mode count must be in 2..N/2")
    cache = cfg.__dict__.setdefault("_mode_basis_cache", {})
    if modes not in cache:
        k = np.arange(modes)
        cache[modes] = np.cos(np.outer(cfg.theta, k))
    return cache[modes]


def _project(cfg: SphereConfig, basis: np.ndarray, vec: np.ndarray):
    """Least-squares mode coefficients and the grid-space defect."""
    coeffs, *_ = np.linalg.lstsq(basis, vec, rcond=None)
    defect = float(np.max(np.abs(basis @ coeffs - vec)))
    return coeffs, defect


def _accel_modes(cfg: SphereConfig, basis: np.ndarray, q: np.ndarray, qdot: np.ndarray):
    """Euler-Lagrange acceleration of the reduced metric G = Phi^T D Phi."""
    u = basis @ q
    state = geometry_state(cfg, u)
    metric = _DynamicMetric(cfg, state)
    if np.min(metric.density[1:-1]) <= 0.0:
        raise ConeError("metric density lost positivity")
    w = basis @ qdot
    force_full = 0.5 * metric.jtmatvec(w * w) - w * metric.jmatvec(w)
    rhs = basis.T @ force_full
    gram = (basis * metric.density[:, None]).T @ basis
    return np.linalg.solve(gram, rhs)


def geodesic_accel(cfg: SphereConfig, u: np.ndarray, w: np.ndarray,
                   modes: int = DEFAULT_MODES) -> np.ndarray:
    """Variational acceleration on the full grid (Galerkin subspace)."""
    basis = mode_basis(cfg, modes)
    q, _ = _project(cfg, basis, np.asarray(u, dtype=float))
    qdot, _ = _project(cfg, basis, np.asarray(w, dtype=float))
    return basis @ _accel_modes(cfg, basis, q, qdot)


def geodesic_rhs(cfg: SphereConfig, u, w: np.ndarray) -> np.ndarray:
    """Pointwise acceleration v_m^{-1} l_rad e^{2u} (dw/dtheta)^2 per node.

    The rotationally symmetric evaluation of v_m^{-1} <L, grad w (x) grad w>
    with respect to g_u: nonnegative wherever L > 0, and exactly zero for
    constant w.  The time integrator uses the variational form
    `geodesic_accel`, which agrees with this to O(h^2).
    """
    state = u if isinstance(u, GeometryState) else geometry_state(cfg, u)
    if not in_cone_Cm(cfg, state):
        raise ConeError("metric is outside the positivity cone")
    dw = derivatives(cfg, np.asarray(w, dtype=float))[0]
    return state.l_rad * state.e2u * dw * dw / state.vm


def _geodesic_monitors(cfg, trace, t, state, w_full, dt, compute_F):
    m = _DynamicMetric(cfg, state).density
    trace.t.append(t)
    trace.momentum.append(float(np.sum(m * w_full)))
    trace.speed2.append(float(np.sum(m * w_full * w_full)))
    trace.entropy.append(float((state.vm * np.log(state.vm)) @ state.w))
    mv, ml = cone_margins(state)
    trace.min_vm.append(mv)
    trace.min_L.append(ml)
    trace.dt.append(dt)
    if compute_F:
        trace.F.append(fn.functional_F(cfg, state.u, check=False).F)
    else:
        trace.F.append(math.nan)


def _rk4_geodesic_step(cfg, basis, q, p, dt):
    k1q, k1p = p, _accel_modes(cfg, basis, q, p)
    k2q = p + 0.5 * dt * k1p
    k2p = _accel_modes(cfg, basis, q + 0.5 * dt * k1q, k2q)
    k3q = p + 0.5 * dt * k2p
    k3p = _accel_modes(cfg, basis, q + 0.5 * dt * k2q, k3q)
    k4q = p + dt * k3p
    k4p = _accel_modes(cfg, basis, q + dt * k3q, k4q)
    q_new = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    p_new = p + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return q_new, p_new


def geodesic_ivp(
    cfg: SphereConfig,
    u0: np.ndarray,
    w0: np.ndarray,
    T: float = 1.0,
    dt: float = 1e-3,
    monitor_every: int = 10,
    compute_F: bool = False,
    modes: int = DEFAULT_MODES,
) -> TrajectoryResult:
    """RK4 integration of the geodesic equation as a second-order system.

    Initial data is projected onto the cosine subspace (the recorded
    projection_defect is ~1e-15 for mode-built data).  Truncates with
    status 'cone_exit' if the trajectory leaves the cone.
    """
    u0 = np.asarray(u0, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    if not in_cone_Cm(cfg, u0):
        raise ConeError("initial metric is outside the positivity cone")
    basis = mode_basis(cfg, modes)
    q, du0 = _project(cfg, basis, u0)
    p, dw0 = _project(cfg, basis, w0)
    nsteps = max(1, round(T / dt))
    dt = T / nsteps

    ts, us, ws = [], [], []
    trace = MonitorTrace()
    status = "ok"
    t_exit = None

    def record(t):
        u_full = basis @ q
        w_full = basis @ p
        state = geometry_state(cfg, u_full)
        _geodesic_monitors(cfg, trace, t, state, w_full, dt, compute_F)
        ts.append(t)
        us.append(u_full)
        ws.append(w_full)

    record(0.0)
    t = 0.0
    for step in range(1, nsteps + 1):
        try:
            q_new, p_new = _rk4_geodesic_step(cfg, basis, q, p, dt)
            if not in_cone_Cm(cfg, basis @ q_new):
                raise ConeError("cone exit")
        except ConeError:
            status = "cone_exit"
            t_exit = t
            break
        q, p = q_new, p_new
        t = step * dt
        if step % monitor_every == 0 or step == nsteps:
            record(t)

    return TrajectoryResult(
        ts=np.array(ts), us=np.array(us), ws=np.array(ws),
        trace=trace, status=status, t_exit=t_exit,
        projection_defect=max(du0, dw0),
    )


def geodesic_bvp(
    cfg: SphereConfig,
    u0: np.ndarray,
    u1: np.ndarray,
    T: float = 1.0,
    dt: float = 2e-3,
    tol: float = 1e-8,
    max_iter: int = 50,
    monitor_every: int = 10,
    compute_F: bool = True,
    modes: int = DEFAULT_MODES,
) -> TrajectoryResult:
    """Single shooting for the geodesic between u0 and u1.

    Solves u(T; w0) = u1 for the initial velocity by a damped quasi-Newton
    (Broyden) iteration in the mode-velocity space, started from the
    straight-line guess; the endpoint map is near-identity for nearby cone
    points.  Raises ConvergenceError after max_iter -- no existence
    theorem backs this problem, so failure is a reportable outcome.
    """
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    for u in (u0, u1):
        if not in_cone_Cm(cfg, u):
            raise ConeError("endpoint metric is outside the positivity cone")
    basis = mode_basis(cfg, modes)
    q0, d0 = _project(cfg, basis, u0)
    q1, d1 = _project(cfg, basis, u1)
    nsteps = max(1, round(T / dt))
    dt = T / nsteps

    def shoot(wv):
        q, p = q0.copy(), wv.copy()
        for _ in range(nsteps):
            q, p = _rk4_geodesic_step(cfg, basis, q, p, dt)
        return q

    def residual(wv):
        # endpoint mismatch in mode coefficients
        return shoot(wv) - q1

    def grid_sup(rv):
        return float(np.max(np.abs(basis @ rv)))

    def fd_jacobian(wv, rv, eps=1e-7):
        # forward differences column by column; the endpoint map couples
        # modes strongly enough that an identity model is not usable.
        # eps is kept small because trajectories near the cone boundary
        # must not be tipped over it by the probe; a column whose probes
        # both graze falls back to the straight-path response T.
        jac = np.empty((wv.size, wv.size))
        for c in range(wv.size):
            probe = wv.copy()
            probe[c] += eps
            try:
                jac[:, c] = (residual(probe) - rv) / eps
            except ConeError:
                probe[c] = wv[c] - eps
                try:
                    jac[:, c] = (rv - residual(probe)) / eps
                except ConeError:
                    jac[:, c] = 0.0
                    jac[c, c] = T
        return jac

    w = (q1 - q0) / T
    r = residual(w)
    best = grid_sup(r)
    jac = None
    stale = True
    for iteration in range(1, max_iter + 1):
        if best <= tol:
            break
        # damped Newton with a finite-difference Jacobian; the Jacobian is
        # reused while full or half steps keep descending and recomputed
        # as soon as the line search has to damp harder (the endpoint map
        # turns strongly nonlinear near the cone boundary)
        if jac is None:
            jac = fd_jacobian(w, r)
            stale = False
        step = -np.linalg.solve(jac, r)
        lam = 1.0
        accepted = False
        for _ in range(8):
            w_new = w + lam * step
            try:
                r_new = residual(w_new)
            except ConeError:
                lam *= 0.5
                continue
            if grid_sup(r_new) < best:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            if stale:
                jac = None  # retry once with a fresh Jacobian
                stale = False
                continue
            raise ConvergenceError(
                "shooting stalled: damping exhausted",
                residual=best, iterations=iteration,
            )
        w, r = w_new, r_new
        best = grid_sup(r_new)
        if lam < 0.5:
            jac = None  # model no longer trusted away from this iterate
        else:
            stale = True
    else:
        raise ConvergenceError(
            f"shooting did not reach {tol:.1e} in {max_iter} iterations",
            residual=best, iterations=max_iter,
        )

    out = geodesic_ivp(
        cfg, basis @ q0, basis @ w, T=T, dt=dt,
        monitor_every=monitor_every, compute_F=compute_F, modes=modes,
    )
    out.projection_defect = max(d0, d1)
    return out


@dataclass
class ConvexityReport:
    ts: np.ndarray
    second_differences: np.ndarray
    integrand_identity: np.ndarray
    min_second_difference: float
    max_identity_deviation: float


def convexity_along_geodesic(cfg: SphereConfig, traj: TrajectoryResult) -> ConvexityReport:
    """Second differences of F(t) along a geodesic trajectory.

    Also evaluates the closed-form integrand
    v V^{-1} [ int v_m^{-1} <L, grad u_t (x) grad u_t> dV
               - n ( int u_t^2 dV - V^{-1} (int u_t dV)^2 ) ]
    at each interior sample, which must match d^2F/dt^2 to O(h^2 + dt^2).
    """
    ts = traj.ts
    if ts.size < 3:
        raise ValueError("need at least three samples along the trajectory")
    Fs = np.array(traj.trace.F)
    if np.any(np.isnan(Fs)):
        Fs = np.array([fn.functional_F(cfg, u, check=False).F for u in traj.us])
    step = ts[1] - ts[0]
    d2F = (Fs[2:] - 2.0 * Fs[1:-1] + Fs[:-2]) / (step * step)
    ident = np.empty(ts.size - 2)
    for k in range(1, ts.size - 1):
        state = geometry_state(cfg, traj.us[k])
        w = traj.ws[k]
        quad = flux_pairing(state, w, w, weight=1.0 / state.vm)
        i2 = float((w * w) @ state.w)
        i1 = float(w @ state.w)
        ident[k - 1] = (
            state.total_v / state.volume
            * (quad - cfg.n * (i2 - i1 * i1 / state.volume))
        )
    return ConvexityReport(
        ts=ts[1:-1],
        second_differences=d2F,
        integrand_identity=ident,
        min_second_difference=float(np.min(d2F)),
        max_identity_deviation=float(np.max(np.abs(d2F - ident))),
    )


def flow_rhs(cfg: SphereConfig, u) -> np.ndarray:
    """Inverse v_m-flow velocity 1 - vbar / v_m (equals -grad F)."""
    state = u if isinstance(u, GeometryState) else geometry_state(cfg, u)
    if np.min(state.vm) <= 0.0:
        raise ConeError("v_m must stay positive along the flow")
    return 1.0 - state.vbar / state.vm


def flow_time_step(cfg: SphereConfig, state: GeometryState, c_cfl: float) -> float:
    """Parabolic-style step bound from the effective diffusion coefficient."""
    lmax = np.maximum(state.l_rad, state.l_tan)
    coeff = state.vm**2 / (state.vbar * lmax * state.e2u)
    return c_cfl * cfg.h**2 * float(np.min(coeff))


def entropy_production(state: GeometryState) -> float:
    """Analytic d/dt of int v_m log v_m dV along the flow:
    -vbar int v_m <L, grad(1/v_m) (x) grad(1/v_m)> dV  (<= 0 for L > 0)."""
    inv = 1.0 / state.vm
    return -state.vbar * flux_pairing(state, inv, inv, weight=state.vm)


def _flow_monitors(cfg, trace, t, state, dt, compute_F):
    rhs = 1.0 - state.vbar / state.vm
    trace.t.append(t)
    trace.momentum.append(float(np.sum(metric_density(state) * rhs)))
    trace.speed2.append(float(np.sum(metric_density(state) * rhs * rhs)))
    trace.entropy.append(float((state.vm * np.log(state.vm)) @ state.w))
    trace.ent_rhs.append(entropy_production(state))
    trace.residual.append(float(np.max(np.abs(rhs))))
    mv, ml = cone_margins(state)
    trace.min_vm.append(mv)
    trace.min_L.append(ml)
    trace.dt.append(dt)
    if compute_F:
        trace.F.append(fn.functional_F(cfg, state.u, check=False).F)
    else:
        trace.F.append(math.nan)


def inverse_flow(
    cfg: SphereConfig,
    u0: np.ndarray,
    T: float,
    c_cfl: float = 0.25,
    stat_tol: float = 1e-9,
    dt_min: float = 1e-12,
    monitor_every: int = 1,
    compute_F: bool = True,
    max_steps: int = 2_000_000,
) -> TrajectoryResult:
    """Explicit RK4 integration of du/dt = 1 - vbar / v_m.

    Stops at t = T or at stationarity sup |1 - vbar / v_m| <= stat_tol
    (status 'stationary').  Leaves the trajectory truncated with status
    'cone_exit' if positivity fails; raises StiffnessError if the adaptive
    step collapses below dt_min.
    """
    u = np.asarray(u0, dtype=float).copy()
    state = geometry_state(cfg, u)
    if not in_cone_Cm(cfg, state):
        raise ConeError("initial metric is outside the positivity cone")

    ts, us = [], []
    trace = MonitorTrace()
    status = "ok"
    t_exit = None
    t = 0.0

    def record(state_now, t_now, dt_now):
        _flow_monitors(cfg, trace, t_now, state_now, dt_now, compute_F)
        ts.append(t_now)
        us.append(state_now.u.copy())

    dt = flow_time_step(cfg, state, c_cfl)
    record(state, 0.0, dt)
    step = 0
    while t < T and step < max_steps:
        step += 1
        residual = float(np.max(np.abs(1.0 - state.vbar / state.vm)))
        if residual <= stat_tol:
            status = "stationary"
            break
        dt = min(flow_time_step(cfg, state, c_cfl), T - t)
        if dt < dt_min:
            raise StiffnessError(f"time step collapsed to {dt:.3e}")
        try:
            k1 = flow_rhs(cfg, state)
            k2 = flow_rhs(cfg, u + 0.5 * dt * k1)
            k3 = flow_rhs(cfg, u + 0.5 * dt * k2)
            k4 = flow_rhs(cfg, u + dt * k3)
            u_new = u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            state_new = geometry_state(cfg, u_new)
            if not in_cone_Cm(cfg, state_new):
                raise ConeError("cone exit")
        except ConeError:
            status = "cone_exit"
            t_exit = t
            break
        u, state = u_new, state_new
        t += dt
        if step % monitor_every == 0:
            record(state, t, dt)
    if not ts or ts[-1] != t:
        record(state, t, dt)

    return TrajectoryResult(
        ts=np.array(ts), us=np.array(us), ws=None,
        trace=trace, status=status, t_exit=t_exit,
    )


def entropy_monitor(cfg: SphereConfig, traj: TrajectoryResult):
    """Finite-difference entropy slope vs the analytic production rate.

    Slopes are taken between consecutive monitor samples and compared with
    the midpoint average of the analytic rate; both are O(dt^2) accurate
    on the (possibly nonuniform) monitor grid.  Returns (t_mid, fd, rhs).
    """
    t = np.asarray(traj.trace.t)
    S = np.asarray(traj.trace.entropy)
    R = np.asarray(traj.trace.ent_rhs)
    if t.size < 2:
        raise ValueError("trajectory too short for entropy differencing")
    dts = np.diff(t)
    keep = dts > 0
    fd = (S[1:] - S[:-1])[keep] / dts[keep]
    mid = 0.5 * (R[1:] + R[:-1])[keep]
    t_mid = (0.5 * (t[1:] + t[:-1]))[keep]
    return t_mid, fd, mid


def family_length(cfg: SphereConfig, us: np.ndarray) -> float:
    """Length of the transverse path s -> u(s, .) in the v_m-metric.

    Centered differences in s (one-sided second order at the ends), the
    metric norm per member, trapezoid over s in [0, 1].
    """
    us = np.asarray(us, dtype=float)
    S = us.shape[0]
    if S < 3:
        raise ValueError("need at least three family members")
    ds = 1.0 / (S - 1)
    dus = np.empty_like(us)
    dus[1:-1] = (us[2:] - us[:-2]) / (2.0 * ds)
    dus[0] = (-3.0 * us[0] + 4.0 * us[1] - us[2]) / (2.0 * ds)
    dus[-1] = (3.0 * us[-1] - 4.0 * us[-2] + us[-3]) / (2.0 * ds)
    speeds = np.empty(S)
    for i in range(S):
        state = geometry_state(cfg, us[i])
        speeds[i] = math.sqrt(max(0.0, metric_inner(state, dus[i], dus[i])))
    return float(np.trapezoid(speeds, dx=ds))


@dataclass
class LengthReport:
    ts: np.ndarray
    lengths: np.ndarray
    status: str
    t_exit: float | None = None


def length_monotonicity(
    cfg: SphereConfig,
    family_u0: np.ndarray,
    T: float,
    c_cfl: float = 0.25,
    monitor_every: int = 25,
    max_steps: int = 2_000_000,
) -> LengthReport:
    """Flow every family member on a shared time grid and track the length.

    The shared step is the minimum of the members' adaptive bounds, so all
    members advance synchronously; the series is truncated with a flag if
    any member leaves the cone.
    """
    us = np.asarray(family_u0, dtype=float).copy()
    S = us.shape[0]
    states = [geometry_state(cfg, us[i]) for i in range(S)]
    for st in states:
        if not in_cone_Cm(cfg, st):
            raise ConeError("a family member starts outside the cone")

    ts = [0.0]
    lengths = [family_length(cfg, us)]
    status = "ok"
    t_exit = None
    t = 0.0
    step = 0
    while t < T and step < max_steps:
        step += 1
        dt = min(flow_time_step(cfg, st, c_cfl) for st in states)
        dt = min(dt, T - t)
        try:
            new_us = np.empty_like(us)
            for i in range(S):
                ui = us[i]
                k1 = flow_rhs(cfg, states[i])
                k2 = flow_rhs(cfg, ui + 0.5 * dt * k1)
                k3 = flow_rhs(cfg, ui + 0.5 * dt * k2)
                k4 = flow_rhs(cfg, ui + dt * k3)
                new_us[i] = ui + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            new_states = [geometry_state(cfg, new_us[i]) for i in range(S)]
            if not all(in_cone_Cm(cfg, st) for st in new_states):
                raise ConeError("cone exit")
        except ConeError:
            status = "cone_exit"
            t_exit = t
            break
        us, states = new_us, new_states
        t += dt
        if step % monitor_every == 0 or t >= T:
            ts.append(t)
            lengths.append(family_length(cfg, us))
    return LengthReport(
        ts=np.array(ts), lengths=np.array(lengths), status=status, t_exit=t_exit
    )


def calibrate_monotonicity_constant(
    cfg: SphereConfig, dt: float = 1e-3, T: float = 0.2
) -> float:
    """Measure the numerical noise floor of the convexity measurements.

    A geodesic launched from the round sphere has a known-positive
    d^2F/dt^2 whose finite-difference value must match the closed-form
    integrand; their largest mismatch -- plus any negative dip of the
    second differences -- is discretization noise.  The returned constant
    C makes C * (h^2 + dt^2) cover it with a factor-five margin.
    """
    u0 = np.zeros(cfg.N)
    traj = geodesic_ivp(
        cfg, u0, 0.05 * np.cos(2.0 * cfg.theta), T=T, dt=dt,
        monitor_every=20, compute_F=True,
    )
    rep = convexity_along_geodesic(cfg, traj)
    worst = max(rep.max_identity_deviation, -rep.min_second_difference, 0.0)
    return 5.0 * worst / (cfg.h**2 + dt**2)
