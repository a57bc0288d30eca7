"""Rotationally symmetric conformal metrics on the round sphere S^{2m}.

A conformal factor u(theta), theta in [0, pi], represents g_u = e^{-2u} g_0
where g_0 is the unit round metric.  With a'(theta) derivatives taken in
g_0, the Schouten endomorphism g_u^{-1} A_u of such a metric has one radial
eigenvalue and one tangential eigenvalue of multiplicity n - 1:

    a_rad = e^{2u} (1/2 + u'' + u'^2 / 2)
    a_tan = e^{2u} (1/2 + cot(theta) u' - u'^2 / 2)

(the cot term is replaced by its limit u'' at the poles).  From these,
v_m = sigma_m of the eigenvalue vector, and the Newton-transformation
eigenvalues l_rad = sigma_{m-1} of the n-1 tangential copies and
l_tan = sigma_{m-1} of {a_rad, (n-2) x a_tan}.  These formulas are gated
by three oracles in the test suite: the round sphere gives 1/2 exactly,
constants rescale by e^{2c}, and conformal pullbacks of the round metric
give 1/2 at every node while int v_m dV stays at its round value.

Two quadratures coexist deliberately.  Scalar integrals (volume, total
v_m, the functionals) use composite Simpson weights `w`; the discrete
Riemannian structure uses the plain node masses `mass` = omega h
sin^{n-1}(theta) e^{-nu}, whose smoothness keeps the variational geodesic
force nonstiff (Simpson's alternating coefficients would make it
oscillate at grid scale).  Pole nodes carry zero mass in both.

Half-node flux coefficients use the exact midpoint value of sin^{n-1}
and a global 1/sinc^2(h/2) normalization: the divided difference of
cos(theta) is exactly -sin(theta_mid) sinc(h/2), so with this choice the
first spherical harmonic is a grid-exact equality case of the weighted
Poincare inequality on the round sphere.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from math import comb, gamma, pi

import numpy as np

from .errors import ConeError, NumericalError


def sphere_area(k: int) -> float:
    """Surface area of the unit k-sphere."""
    return 2.0 * pi ** ((k + 1) / 2.0) / gamma((k + 1) / 2.0)


def round_total_v(m: int) -> float:
    """Closed-form int sigma_m dV over the unit round S^{2m}.

    sigma_m(1/2, ..., 1/2) = C(2m, m) 2^{-m} times the sphere volume.
    """
    n = 2 * m
    vol = sphere_area(n - 1) * _sin_power_integral(n - 1)
    return comb(n, m) * 2.0 ** (-m) * vol


def _sin_power_integral(p: int) -> float:
    """int_0^pi sin^p theta dtheta (Wallis)."""
    return np.sqrt(pi) * gamma((p + 1) / 2.0) / gamma(p / 2.0 + 1.0)


@dataclass
class SphereConfig:
    """Grid and dimension data for S^{2m} reduced to [0, pi].

    N must be odd (composite Simpson) and at least 33; nodes are
    theta_j = j h with h = pi / (N - 1).
    """

    m: int
    N: int

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need m >= 2 (dimension n = 2m >= 4)")
        if self.N < 33 or self.N % 2 == 0:
            raise ValueError("grid size N must be odd and >= 33")
        n = 2 * self.m
        self.n = n
        self.h = pi / (self.N - 1)
        self.theta = np.linspace(0.0, pi, self.N)
        self.sin_t = np.sin(self.theta)
        self.sin_pow = self.sin_t ** (n - 1)
        # cot(theta) with placeholder zeros at the poles; pole values of
        # cot*u' are supplied separately via the u'' limit
        self.cot = np.zeros(self.N)
        self.cot[1:-1] = np.cos(self.theta[1:-1]) / self.sin_t[1:-1]
        self.omega = sphere_area(n - 1)
        simp = np.ones(self.N)
        simp[1:-1:2] = 4.0
        simp[2:-1:2] = 2.0
        self.simpson = simp / 3.0
        # midpoints of the N-1 half intervals; fluxes through the two
        # pole-adjacent halves are dropped (zero conductivity there)
        mid = self.theta[:-1] + 0.5 * self.h
        self.sin_pow_half = np.sin(mid) ** (n - 1)
        self.sin_pow_half[0] = 0.0
        self.sin_pow_half[-1] = 0.0
        self.sinc2 = (np.sin(0.5 * self.h) / (0.5 * self.h)) ** 2
        # binomial factors for the two-eigenvalue closed forms
        mm = self.m
        self.b_vm_tan = comb(n - 1, mm)
        self.b_vm_rad = comb(n - 1, mm - 1)
        self.b_lt_tan = comb(n - 2, mm - 1)
        self.b_lt_rad = comb(n - 2, mm - 2)

    @property
    def volume_round(self) -> float:
        return self.omega * _sin_power_integral(self.n - 1)


def derivatives(cfg: SphereConfig, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Second-order centered u', u'' with even symmetry at the poles.

    The extension u(-theta) = u(theta) gives u'(0) = u'(pi) = 0 and the
    one-sided second difference 2(u_1 - u_0)/h^2 for u''.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (cfg.N,):
        raise ValueError(f"conformal factor must have shape ({cfg.N},)")
    h = cfg.h
    du = np.zeros(cfg.N)
    ddu = np.empty(cfg.N)
    du[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    ddu[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h)
    ddu[0] = 2.0 * (u[1] - u[0]) / (h * h)
    ddu[-1] = 2.0 * (u[-2] - u[-1]) / (h * h)
    return du, ddu


@dataclass
class GeometryState:
    """Per-node derived quantities of g_u = e^{-2u} g_0."""

    cfg: SphereConfig
    u: np.ndarray
    du: np.ndarray
    ddu: np.ndarray
    e2u: np.ndarray
    a_rad: np.ndarray
    a_tan: np.ndarray
    vm: np.ndarray
    l_rad: np.ndarray
    l_tan: np.ndarray
    w: np.ndarray  # Simpson quadrature weights for dV_u
    mass: np.ndarray  # smooth node masses for the v_m-metric
    volume: float = field(init=False)
    total_v: float = field(init=False)

    def __post_init__(self):
        self.volume = float(self.w.sum())
        self.total_v = float(self.vm @ self.w)

    @property
    def vbar(self) -> float:
        return self.total_v / self.volume

    def eigenvalue_vector(self, j: int) -> np.ndarray:
        """The full n-vector (a_rad, a_tan x (n-1)) at node j."""
        out = np.full(self.cfg.n, self.a_tan[j])
        out[0] = self.a_rad[j]
        return out


def geometry_state(cfg: SphereConfig, u: np.ndarray) -> GeometryState:
    u = np.asarray(u, dtype=float)
    du, ddu = derivatives(cfg, u)
    e2u = np.exp(2.0 * u)
    rho = 0.5 + ddu + 0.5 * du * du
    tau = 0.5 + cfg.cot * du - 0.5 * du * du
    tau[0] = 0.5 + ddu[0]
    tau[-1] = 0.5 + ddu[-1]
    a_rad = e2u * rho
    a_tan = e2u * tau
    tpow = a_tan ** (cfg.m - 1)
    vm = cfg.b_vm_tan * a_tan * tpow + cfg.b_vm_rad * a_rad * tpow
    l_rad = cfg.b_vm_rad * tpow
    if cfg.m == 2:
        l_tan = cfg.b_lt_tan * a_tan + cfg.b_lt_rad * a_rad
    else:
        spow = a_tan ** (cfg.m - 2)
        l_tan = cfg.b_lt_tan * a_tan * spow + cfg.b_lt_rad * a_rad * spow
    enu = np.exp(-cfg.n * u)
    w = cfg.omega * cfg.h * cfg.simpson * cfg.sin_pow * enu
    mass = cfg.omega * cfg.h * cfg.sin_pow * enu
    state = GeometryState(
        cfg=cfg, u=u, du=du, ddu=ddu, e2u=e2u, a_rad=a_rad, a_tan=a_tan,
        vm=vm, l_rad=l_rad, l_tan=l_tan, w=w, mass=mass,
    )
    for arr in (a_rad, a_tan, vm, l_rad, l_tan, w):
        if not np.all(np.isfinite(arr)):
            raise NumericalError("geometry produced non-finite values")
    return state


def _state(cfg: SphereConfig, u) -> GeometryState:
    return u if isinstance(u, GeometryState) else geometry_state(cfg, u)


def integrate(cfg: SphereConfig, u, f: np.ndarray) -> float:
    """int f dV_u by the Simpson weights."""
    state = _state(cfg, u)
    return float(np.asarray(f, dtype=float) @ state.w)


def volume(cfg: SphereConfig, u) -> float:
    return _state(cfg, u).volume


def total_v(cfg: SphereConfig, u) -> float:
    """int v_m dV_u; conformally invariant up to discretization error."""
    return _state(cfg, u).total_v


def half_node_conductivity(state: GeometryState, weight=None) -> np.ndarray:
    """Flux coefficients on the N-1 half intervals.

    c_{j+1/2} = omega * sin^{n-1}(theta_mid) * avg(kappa) / sinc^2(h/2),
    kappa = l_rad e^{(2-n)u} (times an optional node weight).  The two
    pole-adjacent halves are zeroed: together with the vanishing measure
    this closes the discrete conservation identities exactly.
    """
    cfg = state.cfg
    kappa = state.l_rad * np.exp((2.0 - cfg.n) * state.u)
    if weight is not None:
        kappa = kappa * weight
    avg = 0.5 * (kappa[:-1] + kappa[1:])
    return cfg.omega * cfg.sin_pow_half * avg / cfg.sinc2


def flux_pairing(state: GeometryState, f, g, weight=None) -> float:
    """Discrete int weight * <L, grad f (x) grad g> dV_u in flux form.

    This single quadratic form backs the divergence operator (as its
    w-adjoint), the linearization check, the Andrews-type gap, the entropy
    production rate, and the geodesic convexity identity.
    """
    cfg = state.cfg
    c = half_node_conductivity(state, weight)
    df = np.diff(np.asarray(f, dtype=float))
    dg = np.diff(np.asarray(g, dtype=float))
    return float(np.sum(c * df * dg) / cfg.h)


def div_L_grad(cfg: SphereConfig, u, phi: np.ndarray) -> np.ndarray:
    """Divergence-form operator phi -> div(L grad phi) with respect to g_u.

    Defined as the w-weighted adjoint of the half-node flux pairing, so
    that sum_j phi_j (div psi)_j w_j = -flux_pairing(phi, psi) holds to
    machine precision, along with exact conservation and symmetry.  Values
    at interior nodes carry the (bounded, oscillating) Simpson coefficient
    in their normalization: consume this operator through integrals.  Pole
    entries have zero quadrature mass and are filled with the symmetric
    limit n * l_rad * e^{2u} * phi'' as a diagnostic.
    """
    state = _state(cfg, u)
    cfg = state.cfg
    phi = np.asarray(phi, dtype=float)
    c = half_node_conductivity(state)
    flux = c * np.diff(phi) / cfg.h
    out = np.empty(cfg.N)
    out[1:-1] = (flux[1:] - flux[:-1]) / state.w[1:-1]
    k0 = state.l_rad[0] * state.e2u[0]
    k1 = state.l_rad[-1] * state.e2u[-1]
    h2 = cfg.h * cfg.h
    out[0] = cfg.n * k0 * 2.0 * (phi[1] - phi[0]) / h2
    out[-1] = cfg.n * k1 * 2.0 * (phi[-2] - phi[-1]) / h2
    return out


def in_cone_Cm(cfg: SphereConfig, u) -> bool:
    """v_m > 0 and the Newton endomorphism positive definite at every node."""
    state = _state(cfg, u)
    return bool(
        np.min(state.vm) > 0.0
        and min(np.min(state.l_rad), np.min(state.l_tan)) > 0.0
    )


def cone_margins(state: GeometryState) -> tuple[float, float]:
    """(min v_m, min eigenvalue of L) over the grid."""
    return (
        float(np.min(state.vm)),
        float(min(np.min(state.l_rad), np.min(state.l_tan))),
    )


def linearization_check(
    cfg: SphereConfig,
    u: np.ndarray,
    udot: np.ndarray,
    probe: np.ndarray | None = None,
    step: float = 1e-4,
) -> tuple[float, float, float]:
    """Compare d/dt int probe * v_m dV along u + t udot with the flux form.

    The time derivative of the v_m measure is a pure divergence, so the
    centered difference of int probe v_m dV must match
    -int <L, grad probe (x) grad udot> dV.  Returns (lhs, rhs, |lhs-rhs|).
    """
    if step <= 0 or not np.isfinite(step):
        raise NumericalError("finite-difference step underflow")
    u = np.asarray(u, dtype=float)
    udot = np.asarray(udot, dtype=float)
    if probe is None:
        probe = np.cos(2.0 * cfg.theta)
    sp = geometry_state(cfg, u + step * udot)
    sm = geometry_state(cfg, u - step * udot)
    lhs = (float(probe @ (sp.vm * sp.w)) - float(probe @ (sm.vm * sm.w))) / (
        2.0 * step
    )
    rhs = -flux_pairing(geometry_state(cfg, u), probe, udot)
    return lhs, rhs, abs(lhs - rhs)


def cos_modes(cfg: SphereConfig, coeffs) -> np.ndarray:
    """u = sum_k c_k cos(k theta): smooth, pole-regular conformal factors."""
    u = np.zeros(cfg.N)
    for k, c in enumerate(np.atleast_1d(coeffs), start=1):
        u += c * np.cos(k * cfg.theta)
    return u


def dilation_factor(cfg: SphereConfig, delta: float) -> np.ndarray:
    """Conformal factor of the pullback of g_0 under the dilation by delta.

    e^{-u} = delta / (cos^2(theta/2) + delta^2 sin^2(theta/2)); the
    resulting metric is isometric to the round one, so every node must
    report Schouten eigenvalues exactly 1/2 and the round total v_m.
    """
    if delta <= 0:
        raise ValueError("dilation parameter must be positive")
    half = 0.5 * cfg.theta
    return np.log(np.cos(half) ** 2 + delta**2 * np.sin(half) ** 2) - np.log(delta)


STATE_CSV_COLUMNS = ("theta", "u", "a_rad", "a_tan", "vm", "l_rad", "l_tan", "weight")


def state_to_csv(state: GeometryState) -> str:
    """Node-value table with the canonical column set."""
    cols = [
        state.cfg.theta, state.u, state.a_rad, state.a_tan,
        state.vm, state.l_rad, state.l_tan, state.w,
    ]
    buf = io.StringIO()
    buf.write(",".join(STATE_CSV_COLUMNS) + "\n")
    for row in zip(*cols):
        buf.write(",".join(f"{x:.17g}" for x in row) + "\n")
    return buf.getvalue()
