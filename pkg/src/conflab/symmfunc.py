"""Elementary symmetric function algebra on eigenvalue vectors.

Everything here is finite-dimensional algebra, independent of any geometry:
elementary symmetric polynomials sigma_k and their binomially normalized
means, the omitted-index values sigma_{k;i} (the diagonal of the Newton
transformation for simultaneously diagonalized tensors), the linear maps
between Ricci and Schouten eigenvalues, positivity cones, the Maclaurin
chain, root interlacing for derivative polynomials, and the bound

    (n-1) sigma_m(a) <= lambda_i sigma_{m-1;i}(a),   n = 2m,

valid whenever the Schouten eigenvalue vector a lies in the positive
m-cone (lambda denotes the corresponding Ricci eigenvalues).

Eigenvalue vectors are 1-D float arrays.  Batch variants act on the last
axis of (batch, n) arrays and back the fuzz campaigns.  Indexing is
0-based throughout: omitting index i removes entry i of the array.

sigma_k is evaluated by the coefficient recursion of prod_i (x + lam_i),
one pass and O(n k); the naive subset enumeration lives in the test suite
as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import DomainError

# Relative slack granted to algebraic identities in double precision.
REL_SLACK = 1e-12
# Absolute bisection tolerance for derivative roots.
BISECT_TOL = 1e-13
_BISECT_ITERS = 60


def _as_vector(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("eigenvalue vector must be a nonempty 1-D array")
    if not np.all(np.isfinite(lam)):
        raise ValueError("eigenvalue vector must be finite")
    return lam


def elem_sym_all(lam) -> np.ndarray:
    """All sigma_0..sigma_n of the entries along the last axis.

    Works on a single vector or on a (batch, n) array; returns an array
    with trailing dimension n + 1.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        x = lam[..., i, None]
        # new sigma_j = old sigma_j + lam_i * old sigma_{j-1}; RHS fully
        # evaluated before assignment, so the shifted slice does not alias.
        e[..., 1 : i + 2] = e[..., 1 : i + 2] + x * e[..., 0 : i + 1]
    return e


def elem_sym(k: int, lam) -> float:
    """sigma_k(lam); sigma_0 = 1."""
    lam = _as_vector(lam)
    n = lam.size
    if not 0 <= k <= n:
        raise ValueError(f"degree k = {k} out of range 0..{n}")
    return float(elem_sym_all(lam)[k])


def elem_sym_omit(k: int, i: int, lam) -> float:
    """sigma_k of lam with entry i removed, i.e. sigma_{k;i}(lam)."""
    lam = _as_vector(lam)
    n = lam.size
    if not 0 <= k <= n - 1:
        raise ValueError(f"degree k = {k} out of range 0..{n - 1}")
    if not 0 <= i < n:
        raise ValueError(f"index i = {i} out of range 0..{n - 1}")
    return float(elem_sym_all(np.delete(lam, i))[k])


def normalized_sym(k: int, lam) -> float:
    """Binomially normalized mean sigma_k / C(n, k)."""
    lam = _as_vector(lam)
    n = lam.size
    if not 0 <= k <= n:
        raise ValueError(f"degree k = {k} out of range 0..{n}")
    return elem_sym(k, lam) / comb(n, k)


def newton_diagonal(k: int, lam) -> np.ndarray:
    """Diagonal of the degree-k Newton transformation: entries sigma_{k;i}.

    Satisfies the Euler identity sum_i lam_i * sigma_{k;i} = (k+1) sigma_{k+1}.
    """
    lam = _as_vector(lam)
    n = lam.size
    if not 0 <= k <= n - 1:
        raise ValueError(f"degree k = {k} out of range 0..{n - 1}")
    return np.array([elem_sym_omit(k, i, lam) for i in range(n)])


def schouten_from_ricci(lam) -> np.ndarray:
    """Eigenvalues of the Schouten endomorphism from Ricci eigenvalues.

    a = (lam - sigma_1(lam)/(2(n-1)) * ones) / (n-2), applied along the
    last axis; linear, hence batch-safe.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if n < 4:
        raise ValueError("need n >= 4")
    s1 = lam.sum(axis=-1, keepdims=True)
    return (lam - s1 / (2.0 * (n - 1))) / (n - 2.0)


def ricci_from_schouten(a) -> np.ndarray:
    """Inverse map: lam_i = (n-2) a_i + sigma_1(a)."""
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    if n < 4:
        raise ValueError("need n >= 4")
    return (n - 2.0) * a + a.sum(axis=-1, keepdims=True)


def in_positive_cone(k: int, a) -> bool:
    """True iff sigma_1(a) > 0, ..., sigma_k(a) > 0."""
    a = _as_vector(a)
    n = a.size
    if not 1 <= k <= n:
        raise ValueError(f"degree k = {k} out of range 1..{n}")
    sig = elem_sym_all(a)
    return bool(np.all(sig[1 : k + 1] > 0.0))


def positive_cone_mask(k: int, a2d: np.ndarray) -> np.ndarray:
    """Row mask of (batch, n) samples with sigma_1..sigma_k all positive."""
    sig = elem_sym_all(np.asarray(a2d, dtype=float))
    return np.all(sig[..., 1 : k + 1] > 0.0, axis=-1)


def maclaurin_check(lam, k: int | None = None) -> tuple[bool, float]:
    """Check the Maclaurin chain of normalized means.

    For sigma_1..sigma_k > 0 the means p_j = (sigma_j / C(n,j))^(1/j) are
    nonincreasing in j.  Returns (holds, min_slack) where min_slack is the
    smallest p_l - p_j over all pairs j > l >= 1 (zero iff all entries
    equal, negative on violation).
    """
    lam = _as_vector(lam)
    n = lam.size
    if k is None:
        k = n
    if not 1 <= k <= n:
        raise ValueError(f"degree k = {k} out of range 1..{n}")
    sig = elem_sym_all(lam)[1 : k + 1]
    if np.any(sig <= 0.0):
        raise DomainError("Maclaurin chain needs sigma_1..sigma_k > 0")
    degrees = np.arange(1, k + 1)
    means = np.array([(sig[j - 1] / comb(n, j)) ** (1.0 / j) for j in degrees])
    slack = np.inf
    for hi in range(1, k):
        for lo in range(hi):
            slack = min(slack, means[lo] - means[hi])
    if k == 1:
        slack = 0.0
    holds = slack >= -REL_SLACK * max(1.0, float(np.max(np.abs(means))))
    return bool(holds), float(slack)


def _coeffs_from_roots(roots: np.ndarray) -> np.ndarray:
    """Monic coefficients, highest degree first, of prod (x - r_i)."""
    sig = elem_sym_all(roots)
    signs = (-1.0) ** np.arange(sig.shape[-1])
    return signs * sig


def _bisect_root(coeffs: np.ndarray, a: float, b: float) -> float:
    fa = np.polyval(coeffs, a)
    if fa == 0.0:
        return a
    fb = np.polyval(coeffs, b)
    if fb == 0.0:
        return b
    if np.sign(fa) == np.sign(fb):
        # interval already at rounding width; interlacing guarantees the
        # root is inside
        return 0.5 * (a + b)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (a + b)
        fm = np.polyval(coeffs, mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b = mid
        if b - a <= BISECT_TOL:
            break
    return 0.5 * (a + b)


def _diff_roots_once(roots: np.ndarray) -> np.ndarray:
    """Roots of P' given the sorted real roots of P, via Rolle interlacing.

    Each root of P' is bracketed between consecutive roots of P; repeated
    roots of P reappear with multiplicity reduced by one.
    """
    k = roots.size
    coeffs = np.polyder(_coeffs_from_roots(roots))
    scale = max(1.0, float(np.max(np.abs(roots))))
    out = np.empty(k - 1)
    for j in range(k - 1):
        a, b = roots[j], roots[j + 1]
        if b - a <= 1e-14 * scale:
            out[j] = 0.5 * (a + b)
        else:
            out[j] = _bisect_root(coeffs, a, b)
    return out


def derivative_roots(lam, order: int) -> np.ndarray:
    """Sorted real roots of the order-th derivative of prod (x - lam_i).

    All derivatives of a real-rooted polynomial are real-rooted (Rolle);
    roots are found by repeated single differentiation with interlacing
    bisection, never a companion-matrix solver.
    """
    lam = _as_vector(lam)
    n = lam.size
    if not 1 <= order <= n - 1:
        raise ValueError(f"order d = {order} out of range 1..{n - 1}")
    roots = np.sort(lam)
    for _ in range(order):
        roots = _diff_roots_once(roots)
    return roots


def derivative_roots_batch(lam2d: np.ndarray) -> np.ndarray:
    """One differentiation level for a (batch, n) array of root sets.

    Vectorized interlacing bisection with a fixed iteration count; feeds
    the Vieta fuzz campaign.
    """
    roots = np.sort(np.asarray(lam2d, dtype=float), axis=1)
    batch, n = roots.shape
    coeffs = _coeffs_from_roots(roots)  # (batch, n+1), highest degree first
    dcoeffs = coeffs[:, :-1] * np.arange(n, 0, -1)

    def horner(x):
        acc = np.broadcast_to(dcoeffs[:, :1], x.shape).copy()
        for j in range(1, n):
            acc = acc * x + dcoeffs[:, j, None]
        return acc

    lo = roots[:, :-1].copy()
    hi = roots[:, 1:].copy()
    flo = horner(lo)
    degenerate = np.sign(flo) == np.sign(horner(hi))
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        fm = horner(mid)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
    out = 0.5 * (lo + hi)
    return np.where(degenerate, 0.5 * (roots[:, :-1] + roots[:, 1:]), out)


def vieta_invariance_check(lam, order: int = 1) -> tuple[bool, float]:
    """Verify that normalized means are preserved under differentiation.

    With mu the roots of P', sigma~_k(lam) = sigma~_k(mu) for all
    0 <= k <= n-1; applied `order` times.  Returns (holds, max |deviation|).
    """
    lam = _as_vector(lam)
    n = lam.size
    if not 1 <= order <= n - 1:
        raise ValueError(f"order d = {order} out of range 1..{n - 1}")
    cur = np.sort(lam)
    max_dev = 0.0
    for _ in range(order):
        mu = _diff_roots_once(cur)
        nc, nm = cur.size, mu.size
        sc = elem_sym_all(cur)
        sm = elem_sym_all(mu)
        for k in range(nm + 1):
            dev = abs(sc[k] / comb(nc, k) - sm[k] / comb(nm, k))
            max_dev = max(max_dev, dev)
        cur = mu
    scale = max(1.0, float(np.max(np.abs(lam))) ** (n - 1))
    return bool(max_dev <= 1e-10 * scale), float(max_dev)


@dataclass(frozen=True)
class CrooshResult:
    lhs: float
    rhs: float
    holds: bool


def croosh_inequality(a, i: int) -> CrooshResult:
    """Check (n-1) sigma_m(a) <= lambda_i sigma_{m-1;i}(a) for a single index.

    a is a Schouten eigenvalue vector of even length n = 2m lying in the
    positive m-cone; lambda = ricci_from_schouten(a).  Raises DomainError
    off the cone, where the inequality is not asserted.
    """
    a = _as_vector(a)
    n = a.size
    if n % 2 != 0 or n < 4:
        raise ValueError("need even n = 2m >= 4")
    m = n // 2
    if not 0 <= i < n:
        raise ValueError(f"index i = {i} out of range 0..{n - 1}")
    if not in_positive_cone(m, a):
        raise DomainError("eigenvalue vector is outside the positive m-cone")
    lam = ricci_from_schouten(a)
    lhs = (n - 1.0) * elem_sym(m, a)
    rhs = float(lam[i]) * elem_sym_omit(m - 1, i, a)
    slack = REL_SLACK * max(abs(lhs), abs(rhs), 1.0)
    return CrooshResult(lhs=lhs, rhs=rhs, holds=bool(lhs <= rhs + slack))


def croosh_margins_batch(a2d: np.ndarray) -> np.ndarray:
    """rhs - lhs of the m-cone inequality for every index, batched.

    a2d is (batch, n) with every row assumed inside the positive m-cone
    (no cone check here; pair with positive_cone_mask).  Returns a
    (batch, n) array of margins lambda_i sigma_{m-1;i} - (n-1) sigma_m.
    """
    a2d = np.asarray(a2d, dtype=float)
    batch, n = a2d.shape
    m = n // 2
    lam = ricci_from_schouten(a2d)
    lhs = (n - 1.0) * elem_sym_all(a2d)[:, m]
    margins = np.empty((batch, n))
    for i in range(n):
        omit = elem_sym_all(np.delete(a2d, i, axis=1))[:, m - 1]
        margins[:, i] = lam[:, i] * omit - lhs
    return margins


def sample_cone(
    m: int,
    count: int,
    rng: np.random.Generator,
    low: float = -1.0,
    high: float = 2.0,
    max_batches: int = 4000,
) -> np.ndarray:
    """Rejection-sample eigenvalue vectors from [low, high]^(2m) into the
    positive m-cone.  Uniform on the accepted region by construction."""
    n = 2 * m
    out = []
    got = 0
    for _ in range(max_batches):
        draw = rng.uniform(low, high, size=(max(4 * count, 1024), n))
        keep = draw[positive_cone_mask(m, draw)]
        if keep.size:
            out.append(keep)
            got += keep.shape[0]
        if got >= count:
            break
    if got < count:
        raise RuntimeError(f"cone sampler accepted only {got}/{count} points")
    return np.concatenate(out, axis=0)[:count]
