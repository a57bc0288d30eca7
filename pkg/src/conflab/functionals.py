"""The 1-form alpha, its primitive E, and the normalized functional F.

alpha_u(phi) = int phi v_m(g_u) dV_u is a closed (hence exact) 1-form on
the space of conformal factors; E is its primitive along the straight
segment s -> s u, normalized by E[0] = 0, evaluated with Gauss-Legendre
quadrature in s.

F is the scale-invariant combination

    F[u] = sign * ( E[u] + (v / n) log V_u ),      v = int v_m dV,

whose first variation is sign * int udot (v_m - vbar) dV_u with
vbar = v / V_u.  The sign is fixed once by `calibrate_sign` so that the
variation equals int udot (-v_m + vbar) dV_u, which makes metrics of
constant v_m the critical points, gives grad F = -1 + vbar / v_m in the
v_m-metric, and makes the inverse v_m-flow the negative gradient flow.
The calibrated value is SIGN_F = -1.  (Note the +(v/n) log V pairing: the
opposite relative sign between E and the log-volume term would break both
scale invariance and the first-variation identity; see the decisions
ledger.)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConeError, NumericalError, PathConeError
from .sphere import GeometryState, SphereConfig, geometry_state, in_cone_Cm

# Global sign of F, frozen by the calibration test against the displayed
# first variation.
SIGN_F = -1

# Gauss-Legendre order for the s-integral defining E, and the agreement
# demanded between consecutive orders.
GL_ORDER = 16
RICHARDSON_TOL = 1e-9


@lru_cache(maxsize=None)
def _gl_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def alpha(cfg: SphereConfig, u, phi: np.ndarray) -> float:
    """alpha_u(phi) = int phi v_m dV_u.  Requires g_u in the cone."""
    state = u if isinstance(u, GeometryState) else geometry_state(cfg, u)
    if not in_cone_Cm(cfg, state):
        raise ConeError("metric is outside the positivity cone")
    return float(np.asarray(phi, dtype=float) @ (state.vm * state.w))


def _segment_quadrature(cfg: SphereConfig, u: np.ndarray, order: int) -> float:
    nodes, weights = _gl_nodes(order)
    acc = 0.0
    for s, wq in zip(nodes, weights):
        state = geometry_state(cfg, s * u)
        if not in_cone_Cm(cfg, state):
            raise PathConeError(s)
        acc += wq * float(u @ (state.vm * state.w))
    return acc


def energy_E(
    cfg: SphereConfig,
    u: np.ndarray,
    order: int = GL_ORDER,
    check: bool = True,
) -> float:
    """E[u] = int_0^1 alpha_{s u}(u) ds, the primitive of alpha with E[0] = 0.

    The straight segment s u must stay in the cone at every quadrature
    node (PathConeError names the failing node otherwise).  With
    check=True the order/2 quadrature is compared against the full one;
    disagreement beyond RICHARDSON_TOL raises NumericalError.
    """
    u = np.asarray(u, dtype=float)
    full = _segment_quadrature(cfg, u, order)
    if check:
        half = _segment_quadrature(cfg, u, order // 2)
        if abs(full - half) > RICHARDSON_TOL * max(1.0, abs(full)):
            raise NumericalError(
                f"s-quadrature not converged: Q{order} vs Q{order // 2} "
                f"differ by {abs(full - half):.3e}"
            )
    return full


def path_energy(cfg: SphereConfig, path, order: int = 32) -> float:
    """int_0^1 alpha_{u(t)}(du/dt) dt for a parameterized path.

    `path` maps t in [0, 1] to a pair (u, udot).  Exactness of alpha makes
    the value depend only on the endpoints, up to quadrature error in t
    and the O(h^2) closedness defect of the discrete 1-form.
    """
    nodes, weights = _gl_nodes(order)
    acc = 0.0
    for t, wq in zip(nodes, weights):
        ut, udot = path(t)
        acc += wq * alpha(cfg, np.asarray(ut, dtype=float), np.asarray(udot, dtype=float))
    return acc


@dataclass(frozen=True)
class FunctionalReport:
    E: float
    F: float
    v: float
    vbar: float
    V: float
    sign: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "E": self.E,
                "F": self.F,
                "v": self.v,
                "vbar": self.vbar,
                "V": self.V,
                "sign": self.sign,
            },
            sort_keys=True,
        )


def functional_F(
    cfg: SphereConfig,
    u: np.ndarray,
    order: int = GL_ORDER,
    check: bool = True,
    sign: int = SIGN_F,
) -> FunctionalReport:
    """Evaluate F[u] = sign (E[u] + (v/n) log V_u) and its ingredients."""
    u = np.asarray(u, dtype=float)
    state = geometry_state(cfg, u)
    if not in_cone_Cm(cfg, state):
        raise ConeError("metric is outside the positivity cone")
    E = energy_E(cfg, u, order=order, check=check)
    v = state.total_v
    V = state.volume
    F = sign * (E + (v / cfg.n) * np.log(V))
    return FunctionalReport(E=E, F=float(F), v=v, vbar=v / V, V=V, sign=sign)


def grad_F(cfg: SphereConfig, u, sign: int = SIGN_F) -> np.ndarray:
    """Gradient of F in the v_m-metric: sign * (1 - vbar / v_m) per node.

    With the calibrated sign this is -1 + vbar / v_m; it vanishes exactly
    when v_m is node-constant, in particular on the round sphere.
    """
    state = u if isinstance(u, GeometryState) else geometry_state(cfg, u)
    if np.min(state.vm) <= 0.0:
        raise ConeError("v_m must be positive to form the gradient")
    return sign * (1.0 - state.vbar / state.vm)


def first_variation(cfg: SphereConfig, u, udot: np.ndarray) -> float:
    """The target variation int udot (-v_m + vbar) dV_u."""
    state = u if isinstance(u, GeometryState) else geometry_state(cfg, u)
    return float(
        np.asarray(udot, dtype=float) @ ((-state.vm + state.vbar) * state.w)
    )


def fd_dF(
    cfg: SphereConfig,
    u: np.ndarray,
    udot: np.ndarray,
    t: float = 1e-4,
    sign: int = SIGN_F,
) -> float:
    """Centered finite difference of F along u + t udot."""
    fp = functional_F(cfg, u + t * udot, check=False, sign=sign).F
    fm = functional_F(cfg, u - t * udot, check=False, sign=sign).F
    return (fp - fm) / (2.0 * t)


def calibrate_sign(
    cfg: SphereConfig,
    u: np.ndarray | None = None,
    udot: np.ndarray | None = None,
    t: float = 1e-4,
) -> int:
    """Pick the sign in {+1, -1} whose F matches the displayed variation.

    Compares the finite difference of (E + (v/n) log V) along udot with
    int udot (-v_m + vbar) dV_u and returns the matching global sign.
    """
    if u is None:
        u = 0.08 * np.cos(cfg.theta) + 0.05 * np.cos(2.0 * cfg.theta)
    if udot is None:
        udot = np.cos(2.0 * cfg.theta)
    plus = fd_dF(cfg, u, udot, t=t, sign=+1)
    target = first_variation(cfg, u, udot)
    return -1 if abs(-plus - target) < abs(plus - target) else +1
