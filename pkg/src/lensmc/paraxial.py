"""Ray-transfer-matrix algebra and the paraxial projection solver.

State vectors are (phi, y): angular deviation first, height second.  The
system matrix of a lens is the ordered product of refraction and
propagation matrices from entrance to sensor, including the final gap to
the sensor plane.  Its image of the unit-height parallel ray (0, 1) is the
"paraxial state" used to define equivalence between lenses of different
topology, and as the equality constraint of the projection solver.

First and second derivatives of the paraxial state with respect to the
flat parameter vector are computed exactly from the factored matrix
product (each factor depends on at most three parameters), which is what
the Newton/KKT solver and the implicit-function Jacobian consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CURVATURE, GAP, INDEX, PARAMS_PER_SURFACE, ElementKind,
                   LensSystem, clamp_theta, from_vector, to_vector)

UNIT_PARALLEL_RAY = np.array([0.0, 1.0])


class ProjectionNoConvergence(RuntimeError):
    """Newton failed to reach the constraint tolerance."""


class SingularKKT(RuntimeError):
    """Degenerate constraint gradient; bordered system is singular."""


def prop_matrix(d: float) -> np.ndarray:
    """Free propagation by distance d: y' = y + d*phi, phi' = phi."""
    return np.array([[1.0, 0.0], [d, 1.0]])


def refract_matrix(curvature: float, n_before: float, n_after: float) -> np.ndarray:
    """Refraction at a spherical surface.

    Matches paraxial Snell refraction with the signed-curvature convention
    of the trace module (positive curvature = center toward the sensor):
    phi' = (n_before/n_after) phi + curvature (n_before - n_after)/n_after y.
    """
    return np.array([
        [n_before / n_after, curvature * (n_before - n_after) / n_after],
        [0.0, 1.0],
    ])


# ---------------------------------------------------------------------------
# Factored system matrix and its derivatives
# ---------------------------------------------------------------------------

@dataclass
class _Factor:
    """One 2x2 factor of the system matrix and its parameter derivatives.

    ``d`` maps a global theta index to dF/dtheta_i; ``d2`` maps an index
    pair (i <= j) to the second derivative.
    """

    mat: np.ndarray
    d: dict
    d2: dict


def _refract_factor(theta, k: int) -> _Factor:
    i_kappa = 4 * k + CURVATURE
    i_n2 = 4 * k + INDEX
    i_n1 = 4 * (k - 1) + INDEX if k > 0 else None
    kappa = theta[i_kappa]
    n2 = theta[i_n2]
    n1 = theta[i_n1] if i_n1 is not None else 1.0

    def m(a, b):
        return np.array([[a, b], [0.0, 0.0]])

    fac = _Factor(refract_matrix(kappa, n1, n2), {}, {})
    fac.d[i_kappa] = m(0.0, (n1 - n2) / n2)
    fac.d[i_n2] = m(-n1 / n2 ** 2, -kappa * n1 / n2 ** 2)
    fac.d2[(min(i_kappa, i_n2), max(i_kappa, i_n2))] = m(0.0, -n1 / n2 ** 2)
    fac.d2[(i_n2, i_n2)] = m(2 * n1 / n2 ** 3, 2 * kappa * n1 / n2 ** 3)
    if i_n1 is not None:
        fac.d[i_n1] = m(1.0 / n2, kappa / n2)
        fac.d2[(min(i_n1, i_kappa), max(i_n1, i_kappa))] = m(0.0, 1.0 / n2)
        fac.d2[(min(i_n1, i_n2), max(i_n1, i_n2))] = m(-1.0 / n2 ** 2,
                                                       -kappa / n2 ** 2)
    return fac


def _prop_factor(theta, k: int) -> _Factor:
    i_gap = 4 * k + GAP
    fac = _Factor(prop_matrix(theta[i_gap]), {}, {})
    fac.d[i_gap] = np.array([[0.0, 0.0], [1.0, 0.0]])
    return fac


def _factors(theta: np.ndarray, include_sensor_gap: bool = True) -> list[_Factor]:
    """Ordered factor list, first-applied first.

    The system matrix is factors[-1] @ ... @ factors[0].
    """
    n_surf = theta.size // PARAMS_PER_SURFACE
    out = []
    for k in range(n_surf):
        out.append(_refract_factor(theta, k))
        if include_sensor_gap or k < n_surf - 1:
            out.append(_prop_factor(theta, k))
    return out


def _product(factors: list[_Factor]) -> np.ndarray:
    m = np.eye(2)
    for f in factors:
        m = f.mat @ m
    return m


def system_matrix(lens: LensSystem) -> np.ndarray:
    """Full transfer matrix entrance -> sensor (final gap included)."""
    return _product(_factors(to_vector(lens)))


def bare_matrix(lens: LensSystem) -> np.ndarray:
    """Transfer matrix of the glass stack alone (no final sensor gap)."""
    return _product(_factors(to_vector(lens), include_sensor_gap=False))


def focal_length(lens: LensSystem) -> float:
    """Effective focal length read off the (0,1) matrix entry as -1/f."""
    b = bare_matrix(lens)[0, 1]
    if b == 0.0:
        return float("inf")
    return -1.0 / b


def front_principal_z(lens: LensSystem) -> float:
    """Axial position of the front principal plane (0 = first vertex)."""
    m = bare_matrix(lens)
    a, b = m[0, 0], m[0, 1]
    if b == 0.0:
        return 0.0
    return (a - 1.0) / b


def paraxial_state(lens: LensSystem) -> np.ndarray:
    """Image (phi_f, y_f) of the unit-height parallel ray."""
    return system_matrix(lens) @ UNIT_PARALLEL_RAY


def paraxial_equal(a: LensSystem, b: LensSystem, tol: float = 1e-8) -> bool:
    """Per-component equality of the two paraxial states within tol."""
    return bool(np.max(np.abs(paraxial_state(a) - paraxial_state(b))) <= tol)


def state_derivatives(theta: np.ndarray, order: int = 1):
    """Paraxial state c(theta) with derivatives.

    Returns (c, J) for order 1 or (c, J, H) for order 2, where J is
    (2, n) and H is (2, n, n), all exact.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    facs = _factors(theta)
    m = len(facs)

    # pre[i] = product of factors < i; suf[i] = product of factors > i.
    pre = [np.eye(2)]
    for f in facs:
        pre.append(f.mat @ pre[-1])
    suf = [np.eye(2)] * (m + 1)
    acc = np.eye(2)
    for i in range(m - 1, -1, -1):
        suf[i] = acc.copy()
        acc = acc @ facs[i].mat
    full = acc

    c = full @ UNIT_PARALLEL_RAY
    jac = np.zeros((2, n))
    for i, f in enumerate(facs):
        for idx, df in f.d.items():
            jac[:, idx] += (suf[i] @ df @ pre[i]) @ UNIT_PARALLEL_RAY
    if order == 1:
        return c, jac

    # mid[i][l] = product of factors strictly between i and l (i < l).
    mid = [[None] * m for _ in range(m)]
    for i in range(m):
        acc = np.eye(2)
        for l in range(i + 1, m):
            mid[i][l] = acc.copy()
            acc = facs[l].mat @ acc

    hess = np.zeros((2, n, n))
    for i, f in enumerate(facs):
        for (p, q), d2 in f.d2.items():
            term = (suf[i] @ d2 @ pre[i]) @ UNIT_PARALLEL_RAY
            hess[:, p, q] += term
            if p != q:
                hess[:, q, p] += term
    for i in range(m):
        for l in range(i + 1, m):
            for pi, dfi in facs[i].d.items():
                for pl, dfl in facs[l].d.items():
                    term = (suf[l] @ dfl @ mid[i][l] @ dfi @ pre[i]) \
                        @ UNIT_PARALLEL_RAY
                    hess[:, pi, pl] += term
                    hess[:, pl, pi] += term
    return c, jac, hess


# ---------------------------------------------------------------------------
# Paraxial projection (equality-constrained nearest point)
# ---------------------------------------------------------------------------

def _structural_indices(elements) -> set[int]:
    """Theta entries pinned by the element structure: the air index after
    each element is 1 by invariant and never a free variable."""
    pinned, start = set(), 0
    for kind in elements:
        start += kind.n_surfaces
        pinned.add(4 * (start - 1) + INDEX)
    return pinned


@dataclass
class ProjectionResult:
    lens: LensSystem
    converged: bool
    residual: float
    multipliers: np.ndarray
    iterations: int
    clamped: bool = False


def _kkt_residual(x, x0, lam, free, theta_full, reference_state):
    theta_full = theta_full.copy()
    theta_full[free] = x
    c, jac = state_derivatives(theta_full, order=1)
    jf = jac[:, free]
    grad = 2.0 * (x - x0) + jf.T @ lam
    return np.concatenate([grad, c - reference_state]), c, jf


def _restore_feasibility(theta0, free, reference_state, max_iter=25):
    """Damped minimum-norm Gauss-Newton steps driving c(theta) onto the
    reference state; used to seed the KKT Newton iteration from a
    near-feasible point (the bare KKT residual is poorly scaled when gap
    and curvature sensitivities differ by orders of magnitude)."""
    theta = theta0.copy()
    for _ in range(max_iter):
        c, jac = state_derivatives(theta, order=1)
        r = c - reference_state
        if np.max(np.abs(r)) < 1e-13:
            break
        jf = jac[:, free]
        try:
            delta = jf.T @ np.linalg.solve(jf @ jf.T, -r)
        except np.linalg.LinAlgError:
            break
        t, norm = 1.0, np.linalg.norm(r)
        theta_new = theta
        for _ in range(25):
            cand = theta.copy()
            cand[free] += t * delta
            c2 = state_derivatives(cand, order=1)[0]
            if np.linalg.norm(c2 - reference_state) < norm:
                theta_new = cand
                break
            t *= 0.5
        if theta_new is theta:
            break
        theta = theta_new
    return theta


def _newton_project(theta0, free, reference_state, max_iter, tol):
    """Damped Newton on the KKT system of the nearest-point problem,
    warm-started from a feasibility-restored point."""
    start = _restore_feasibility(theta0, free, reference_state)
    x = start[free].copy()
    x0 = theta0[free].copy()
    lam = np.zeros(2)
    theta_full = theta0.copy()
    f_val, _, _ = _kkt_residual(x, x0, lam, free, theta_full, reference_state)
    norm = np.linalg.norm(f_val)
    for it in range(max_iter):
        if norm <= tol:
            break
        theta_full[free] = x
        c, jac, hess = state_derivatives(theta_full, order=2)
        jf = jac[:, free]
        hf = hess[np.ix_([0, 1], free, free)]
        h = 2.0 * np.eye(free.size) + np.einsum("a,aij->ij", lam, hf)
        kkt = np.block([[h, jf.T], [jf, np.zeros((2, 2))]])
        rhs = -np.concatenate([2.0 * (x - x0) + jf.T @ lam,
                               c - reference_state])
        try:
            delta = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            delta, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        # Backtracking on the KKT residual norm.
        t = 1.0
        for _ in range(30):
            x_new = x + t * delta[:free.size]
            lam_new = lam + t * delta[free.size:]
            f_new, _, _ = _kkt_residual(x_new, x0, lam_new, free,
                                        theta_full, reference_state)
            if np.linalg.norm(f_new) < (1 - 1e-4 * t) * norm:
                break
            t *= 0.5
        x, lam = x_new, lam_new
        norm = np.linalg.norm(f_new)
    theta_full[free] = x
    resid = float(np.max(np.abs(
        state_derivatives(theta_full, order=1)[0] - reference_state)))
    return theta_full, lam, resid, it + 1


def paraxial_project(mutated: LensSystem, reference_state: np.ndarray,
                     frozen=(), max_iter: int = 50,
                     tol: float = 1e-11) -> ProjectionResult:
    """Nearest lens (in theta) to ``mutated`` whose paraxial state equals
    ``reference_state``, with the ``frozen`` theta entries held fixed.

    Gaps and extents that come out infeasible are clamped and the solve is
    repeated once with those entries also frozen; if the constraint
    residual then exceeds 1e-9 the result is flagged as not converged.
    """
    theta0 = to_vector(mutated)
    reference_state = np.asarray(reference_state, dtype=float)
    frozen = set(int(i) for i in frozen) | _structural_indices(mutated.elements)
    free = np.array([i for i in range(theta0.size) if i not in frozen],
                    dtype=int)
    if free.size == 0:
        resid = float(np.max(np.abs(paraxial_state(mutated)
                                    - reference_state)))
        return ProjectionResult(mutated, resid <= 1e-9, resid,
                                np.zeros(2), 0)

    theta, lam, resid, iters = _newton_project(
        theta0, free, reference_state, max_iter, tol)

    clamped_theta = clamp_theta(theta, mutated.elements, min_gap=1e-3,
                                min_extent=1e-3)
    clamped = bool(np.any(clamped_theta != theta))
    if clamped:
        # Freeze the clamped entries and re-solve once from the clamp.
        moved = np.nonzero(clamped_theta != theta)[0]
        free2 = np.array([i for i in free if i not in set(moved)], dtype=int)
        if free2.size:
            theta, lam, resid, it2 = _newton_project(
                clamped_theta, free2, reference_state, max_iter, tol)
            iters += it2
        else:
            theta = clamped_theta
        theta = clamp_theta(theta, mutated.elements, min_gap=1e-3,
                            min_extent=1e-3)
        # The final clamp may have moved theta again; judge convergence on
        # what is actually returned.
        resid = float(np.max(np.abs(
            state_derivatives(theta, order=1)[0] - reference_state)))

    lens = from_vector(theta, mutated.elements, mutated.target_z)
    return ProjectionResult(lens, resid <= 1e-9, resid, lam, iters, clamped)


def projection_jacobian(projected: LensSystem, multipliers: np.ndarray,
                        frozen=()) -> np.ndarray:
    """d(projection output)/d(projection input) at a converged KKT point.

    Solves the bordered linear system obtained by differentiating the KKT
    conditions of the nearest-point problem (objective ||theta - theta*||^2,
    constraint c(theta*) = reference) with respect to the input theta.
    Frozen entries pass through identically.  Raises :class:`SingularKKT`
    when the bordered matrix is singular.
    """
    theta = to_vector(projected)
    n = theta.size
    frozen = sorted(set(int(i) for i in frozen)
                    | _structural_indices(projected.elements))
    free = np.array([i for i in range(n) if i not in frozen], dtype=int)
    _, jac, hess = state_derivatives(theta, order=2)
    lam = np.asarray(multipliers, dtype=float)

    jf = jac[:, free]
    h_full = np.einsum("a,aij->ij", lam, hess)
    h = 2.0 * np.eye(free.size) + h_full[np.ix_(free, free)]
    kkt = np.block([[h, jf.T], [jf, np.zeros((2, 2))]])

    rhs = np.zeros((free.size + 2, n))
    rhs[:free.size, free] = 2.0 * np.eye(free.size)
    if frozen:
        fro = np.array(frozen, dtype=int)
        # Frozen entries move one-to-one with the input and drag both the
        # stationarity condition and the constraint along.
        rhs[:free.size, fro] = -h_full[np.ix_(free, fro)]
        rhs[free.size:, fro] = -jac[:, fro]
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as err:
        raise SingularKKT("bordered KKT system is singular") from err
    if not np.all(np.isfinite(sol)):
        raise SingularKKT("bordered KKT system is singular")

    jac_out = np.zeros((n, n))
    jac_out[free, :] = sol[:free.size, :]
    for i in frozen:
        jac_out[i, i] = 1.0
    return jac_out
