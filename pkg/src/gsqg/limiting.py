"""Whole-plane limiting problem: radial ground state by damped fixed point.

The maximizer of E0(w) = (c_s/2) int int w w |x-y|^(2s-2) - int J(w) over
nonnegative mass-kappa fields is radial and non-increasing, so the solve is
reduced to a 1D radial grid.  The potential of each unit-density annulus at a
target radius is computed by azimuthal Gauss quadrature in which the radial
integral along each ray is exact (closed-form primitive of r^(2s-1) between
the ray/annulus intersection points); this keeps the kernel diagonal accurate
for every s in (0, 1).

The fixed point iterated is  w  <-  f((psi - mu)_+)  with mu chosen by
bisection so the mass stays exactly kappa, damped and monitored for energy
ascent.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import binary_dilation

from .errors import (
    BracketError,
    ConvergenceError,
    DomainError,
    DomainTooSmallError,
    ParameterError,
    RegimeError,
    ResourceLimitError,
)
from .fields import Field2D, Grid2D, RadialField
from .kernels import (
    KernelParams,
    potential_free_grid,
    singular_cell_weight,
)
from .profiles import PowerProfile, compute_struct_constants


# ---------------------------------------------------------------------------
# radial kernel matrix


def _gauss_legendre(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def ring_potential_matrix(r_targets, r_nodes, dr, params, n_angles=128):
    """M[i, j] = kernel integral over annulus j (unit density) at radius
    r_targets[i] from the origin.

    Per angle alpha the admissible ray segment is the root interval of two
    quadratics (intersection with the annulus circles); the radial integral
    of c_s t^(2s-2) * t dt over a segment [a, b] is c_s (b^(2s)-a^(2s))/(2s).
    """
    r_targets = np.asarray(r_targets, dtype=float)
    r_nodes = np.asarray(r_nodes, dtype=float)
    s = params.s
    ang, w_ang = _gauss_legendre(n_angles, 0.0, math.pi)
    sin_a, cos_a = np.sin(ang), np.cos(ang)
    R2o = r_nodes + 0.5 * dr
    R1o = np.clip(r_nodes - 0.5 * dr, 0.0, None)
    M = np.empty((r_targets.size, r_nodes.size))
    two_s = 2.0 * s
    chunk = max(1, int(4e6 // (r_nodes.size * n_angles)))
    for i0 in range(0, r_targets.size, chunk):
        r = r_targets[i0:i0 + chunk][:, None, None]        # (c,1,1)
        b = r * cos_a[None, None, :]                       # (c,1,na)
        rs2 = (r * sin_a[None, None, :]) ** 2

        def seg(R):
            g = R[None, :, None] ** 2 - rs2
            sq = np.sqrt(np.clip(g, 0.0, None))
            tp = np.clip(-b + sq, 0.0, None)
            tm = np.clip(-b - sq, 0.0, None)
            return np.where(g > 0.0, tp ** two_s - tm ** two_s, 0.0)

        val = seg(R2o) - seg(R1o)
        M[i0:i0 + chunk] = 2.0 * (params.c_s / two_s) * np.sum(
            val * w_ang[None, None, :], axis=2)
    return M


# ---------------------------------------------------------------------------
# multiplier bisection (shared with the pair solver)


def solve_multiplier(psi_eff, measures, profile, kappa,
                     mass_tol=1e-12, max_iter=220):
    """Find mu with sum measures * (J')^{-1}((psi_eff - mu)_+) = kappa.

    The mass is continuous and strictly decreasing in mu, so bisection on
    [lo, max psi_eff] has a unique root; lo starts at 0 and is pushed negative
    if the mass at mu = 0 falls short (transient iterates only; converged
    multipliers come out positive).
    """

    def mass_at(mu):
        return float(np.sum(measures * profile.Jprime_inverse(psi_eff - mu)))

    hi = float(np.max(psi_eff))
    lo = 0.0
    m_lo = mass_at(lo)
    span = max(hi, 1.0)
    n_expand = 0
    while m_lo < kappa:
        lo -= span
        span *= 2.0
        m_lo = mass_at(lo)
        n_expand += 1
        if n_expand > 60:
            raise BracketError(
                f"multiplier bracket exhausted: mass at mu={lo:.3g} is "
                f"{m_lo:.3g} < kappa={kappa:.3g}")
    if mass_at(hi) > kappa:
        raise BracketError("mass at mu = max(psi) exceeds kappa")
    mu = 0.5 * (lo + hi)
    for _ in range(max_iter):
        m = mass_at(mu)
        if abs(m - kappa) <= mass_tol * kappa:
            break
        if m > kappa:
            lo = mu
        else:
            hi = mu
        mu = 0.5 * (lo + hi)
    omega = profile.Jprime_inverse(psi_eff - mu)
    m = float(np.sum(measures * omega))
    if m <= 0:
        raise BracketError("mass collapsed to zero during bisection")
    return mu, omega * (kappa / m)


# ---------------------------------------------------------------------------
# energies


def energy_E0(field: Field2D, profile, params: KernelParams) -> float:
    """E0 = (1/2) int w G*w - int J(w) for a cell-averaged field."""
    vals = field.values
    if np.any(vals < 0):
        raise DomainError("E0 is defined for nonnegative fields")
    psi = potential_free_grid(field, params)
    a = field.grid.cell_area
    return float(0.5 * np.sum(vals * psi) * a - np.sum(profile.J(vals)) * a)


@dataclass
class LimitingSolution:
    """Converged whole-plane ground state on a radial grid."""

    s: float
    p: float                    # None for a general (non-power) profile
    L: float
    kappa: float
    omega0: RadialField
    psi0: np.ndarray            # potential at the radial nodes
    mu0: float
    E0: float
    kinetic: float              # int w G w
    j_integral: float           # int J(w)
    support_radius: float
    iterations: int
    converged: bool
    residuals: dict
    n_angles: int
    warnings: list = dc_field(default_factory=list)
    profile_obj: object = None  # set for general profiles

    @property
    def params(self):
        return KernelParams.from_order(self.s)

    @property
    def profile(self):
        if self.profile_obj is not None:
            return self.profile_obj
        return PowerProfile(p=self.p, s=self.s, L=self.L)

    def report(self):
        has_ids = "virial" in self.residuals
        return {
            "s": self.s,
            "p": self.p,
            "kappa": self.kappa,
            "mu0": self.mu0,
            "E0": self.E0,
            "support_radius": self.support_radius,
            "virial_residual": self.residuals["virial"] if has_ids else None,
            "multiplier_residual": max(
                self.residuals["multiplier_vs_energy"],
                self.residuals["multiplier_vs_integrals"]) if has_ids else None,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _radial_energy(omega, psi, meas, profile):
    kin = float(np.sum(meas * omega * psi))
    jint = float(np.sum(meas * profile.J(omega)))
    return 0.5 * kin - jint, kin, jint


def _initial_patch(profile, params, kappa):
    """Trial patch with positive energy: density r^-2 on the disk of radius
    a*r (a = sqrt(kappa/pi)), with r picked from a coarse dyadic scan."""
    a = math.sqrt(kappa / math.pi)
    # unit-disk self-energy of the free kernel, once, on a small radial grid
    nr0 = 96
    dr0 = 1.0 / nr0
    r0 = (np.arange(nr0) + 0.5) * dr0
    m0 = ring_potential_matrix(r0, r0, dr0, params, n_angles=64)
    meas0 = math.pi * ((r0 + 0.5 * dr0) ** 2 - (r0 - 0.5 * dr0) ** 2)
    t1 = float(np.sum(meas0 * (m0 @ np.ones(nr0)))) / params.c_s
    best = None
    for r in [2.0 ** k for k in range(0, 7)]:
        kin = 0.5 * params.c_s * a ** (2 + 2 * params.s) * t1 * r ** (
            2 * params.s - 2)
        jint = float(profile.J(r ** -2)) * math.pi * (a * r) ** 2
        e = kin - jint
        if best is None or e > best[0]:
            best = (e, r)
    return best[1], a * best[1], best[0]


def solve_limiting(s, p, kappa=1.0, nr=256, rmax=None, L=None,
                   n_angles=64, tol=1e-6, max_iter=2000, damping=0.5):
    """Damped fixed-point solve of the limiting maximization problem.

    Returns a LimitingSolution whose Euler-Lagrange residual
    ||w - f((G w - mu)_+)||_1 / kappa is below tol.
    """
    params = KernelParams.from_order(s)
    profile = PowerProfile(p=p, s=s, L=L)
    if kappa <= 0:
        raise ParameterError("kappa must be positive")
    if not profile.hypotheses_ok:
        raise ParameterError(
            f"profile p={p} violates p < 1/(1-s) = {1.0 / (1.0 - s):.6g}")
    warnings = []
    if p <= 1.0:
        warnings.append("p <= 1: maximizer computed with no uniqueness guarantee")

    r_patch, support_est, _ = _initial_patch(profile, params, kappa)
    if rmax is None:
        # cheap coarse pass to size the domain: the patch estimate can be off
        # by an order of magnitude when the ground state is concentrated
        coarse = _with_domain_retry(
            profile, params, kappa, min(96, nr), 8.0 * support_est, 64,
            1e-4, max_iter, damping, r_patch, [])
        rmax = 4.0 * coarse.support_radius

    return _with_domain_retry(profile, params, kappa, nr, rmax, n_angles,
                              tol, max_iter, damping, r_patch, warnings)


def solve_limiting_general(s, profile, kappa=1.0, nr=128, rmax=None,
                           n_angles=96, tol=1e-5, max_iter=2000, damping=0.5):
    """Existence-level solve for an arbitrary profile given as closures
    (J and (J')^{-1} = f are what the iteration needs).

    The scaling/multiplier identity battery is gated to the power law, so the
    returned residuals carry the fixed-point residual only."""
    params = KernelParams.from_order(s)
    if kappa <= 0:
        raise ParameterError("kappa must be positive")
    r_patch, support_est, _ = _initial_patch(profile, params, kappa)
    if rmax is None:
        coarse = _with_domain_retry(
            profile, params, kappa, min(96, nr), 8.0 * support_est, 64,
            1e-4, max_iter, damping, r_patch, [], s=s)
        rmax = 4.0 * coarse.support_radius
    return _with_domain_retry(profile, params, kappa, nr, rmax, n_angles,
                              tol, max_iter, damping, r_patch, [], s=s)


def _with_domain_retry(profile, params, kappa, nr, rmax, n_angles, tol,
                       max_iter, damping, r_patch, warnings, s=None):
    for attempt in range(2):
        sol = _solve_limiting_on(
            profile, params, kappa, nr, rmax, n_angles, tol, max_iter,
            damping, r_patch, warnings, s=s)
        if sol.support_radius <= 0.9 * rmax:
            return sol
        if attempt == 0:
            warnings.append(
                f"support touched 0.9*rmax={0.9 * rmax:.3g}; doubling rmax")
            rmax *= 2.0
    raise DomainTooSmallError(
        f"support radius {sol.support_radius:.3g} still touches rmax={rmax:.3g} "
        "after doubling")


def _solve_limiting_on(profile, params, kappa, nr, rmax, n_angles, tol,
                       max_iter, damping, r_patch, warnings, s=None):
    dr = rmax / nr
    r = (np.arange(nr) + 0.5) * dr
    meas = math.pi * ((np.arange(nr) + 1) ** 2 - np.arange(nr) ** 2) * dr ** 2
    M = ring_potential_matrix(r, r, dr, params, n_angles=n_angles)

    a_patch = math.sqrt(kappa / math.pi) * r_patch
    omega = np.where(r < a_patch, r_patch ** -2.0, 0.0)
    m = float(np.sum(meas * omega))
    if m <= 0:
        omega = np.where(r < r[nr // 4], 1.0, 0.0)
        m = float(np.sum(meas * omega))
    omega *= kappa / m

    theta = damping
    psi = M @ omega
    energy, _, _ = _radial_energy(omega, psi, meas, profile)
    mu = 0.0
    residual = math.inf
    it = 0
    bad_streak = 0
    for it in range(1, max_iter + 1):
        mu, f_omega = solve_multiplier(psi, meas, profile, kappa)
        residual = float(np.sum(meas * np.abs(f_omega - omega))) / kappa
        if residual <= tol:
            break
        stepped = False
        for _ in range(7):
            trial = (1.0 - theta) * omega + theta * f_omega
            psi_t = M @ trial
            e_t, _, _ = _radial_energy(trial, psi_t, meas, profile)
            if e_t >= energy - 1e-8 * abs(energy):
                omega, psi, energy = trial, psi_t, e_t
                theta = min(damping, theta * 1.3)
                stepped = True
                break
            theta *= 0.5
        if not stepped:
            bad_streak += 1
            omega = (1.0 - theta) * omega + theta * f_omega
            psi = M @ omega
            energy, _, _ = _radial_energy(omega, psi, meas, profile)
            if bad_streak >= 8:
                raise ConvergenceError(
                    "sustained energy descent in the damped iteration",
                    residual=residual, iterations=it)
        else:
            bad_streak = 0
    else:
        raise ConvergenceError(
            f"no convergence in {max_iter} iterations (residual {residual:.3g})",
            residual=residual, iterations=max_iter)

    energy, kin, jint = _radial_energy(omega, psi, meas, profile)
    nz = np.nonzero(omega > 1e-12 * omega.max())[0]
    support_radius = float(r[nz[-1]] + 0.5 * dr) if nz.size else 0.0
    is_power = getattr(profile, "is_power", False)
    sol = LimitingSolution(
        s=profile.s if is_power else s,
        p=profile.p if is_power else None,
        L=profile.L if is_power else None,
        kappa=kappa,
        omega0=RadialField(nr, rmax, omega), psi0=psi, mu0=mu,
        E0=energy, kinetic=kin, j_integral=jint,
        support_radius=support_radius, iterations=it,
        converged=True, residuals={}, n_angles=n_angles, warnings=warnings,
        profile_obj=None if is_power else profile,
    )
    sol.residuals = {"fixed_point": residual}
    if is_power:
        # the scaling/multiplier identity battery holds for power laws only
        sol.residuals.update(virial=virial_residual(sol),
                             **_multiplier_residuals(sol))
    return sol


# ---------------------------------------------------------------------------
# identity residuals


def virial_residual(sol: LimitingSolution) -> float:
    """Scaling-stationarity mismatch |(s-1) A - (2-2g) B| normalized by the
    magnitudes of the two sides (A = int w G w, B = int J(w))."""
    gamma = sol.profile.gamma
    lhs = (sol.s - 1.0) * sol.kinetic
    rhs = (2.0 - 2.0 * gamma) * sol.j_integral
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs))


def _multiplier_residuals(sol: LimitingSolution) -> dict:
    gamma = sol.profile.gamma
    consts = compute_struct_constants(sol.s, sol.p, L=sol.L, kappa=sol.kappa)
    mu_from_integrals = (sol.kinetic - gamma * sol.j_integral) / sol.kappa
    mu_from_energy = consts.A_gamma * sol.E0 / sol.kappa
    scale = max(abs(sol.mu0), abs(mu_from_integrals), abs(mu_from_energy))
    return {
        "multiplier_vs_integrals": abs(sol.mu0 - mu_from_integrals) / scale,
        "multiplier_vs_energy": abs(sol.mu0 - mu_from_energy) / scale,
        "multiplier_mutual": abs(mu_from_integrals - mu_from_energy) / scale,
    }


def multiplier_residual(sol: LimitingSolution) -> dict:
    """Relative mismatches of the two multiplier representations
    (kappa mu = A - gamma B and kappa mu = A_gamma E0) against the solver's
    mu and against each other."""
    return _multiplier_residuals(sol)


# ---------------------------------------------------------------------------
# 2D export and the linearized operator


@dataclass
class Limiting2DState:
    """Ground state re-converged on a 2D grid (discrete EL holds on it)."""

    field: Field2D
    psi: np.ndarray
    mu: float
    E0: float
    s: float
    p: float
    L: float
    kappa: float
    polish_residual: float

    @property
    def params(self):
        return KernelParams.from_order(self.s)

    @property
    def profile(self):
        return PowerProfile(p=self.p, s=self.s, L=self.L)


def radial_to_field(radial: RadialField, grid: Grid2D,
                    center=(0.0, 0.0)) -> Field2D:
    """Sample a radial profile at the cell centers of a 2D grid."""
    X1, X2 = grid.centers()
    rr = np.hypot(X1 - center[0], X2 - center[1])
    r = radial.radii()
    vals = np.interp(rr.ravel(), r, radial.values, left=radial.values[0],
                     right=0.0).reshape(X1.shape)
    return Field2D(grid, vals, nonneg=True)


def to_state_2d(sol: LimitingSolution, n, box_halfwidth=None,
                polish_iters=200, polish_tol=1e-8) -> Limiting2DState:
    """Resample the radial ground state onto an n x n grid and polish it with
    the same damped fixed point so the 2D discrete EL equation holds."""
    if box_halfwidth is None:
        box_halfwidth = 1.45 * sol.support_radius
    grid = Grid2D(n, n, -box_halfwidth, box_halfwidth,
                  -box_halfwidth, box_halfwidth)
    f = radial_to_field(sol.omega0, grid)
    profile, params, kappa = sol.profile, sol.params, sol.kappa
    a = grid.cell_area
    vals = f.values * (kappa / (np.sum(f.values) * a))
    meas = np.full(vals.size, a)
    mu = sol.mu0
    residual = math.inf
    theta = 0.5
    for _ in range(polish_iters):
        psi = potential_free_grid(Field2D(grid, vals, nonneg=True), params)
        mu, f_new = solve_multiplier(psi.ravel(), meas, profile, kappa)
        f_new = f_new.reshape(vals.shape)
        residual = float(np.sum(np.abs(f_new - vals)) * a) / kappa
        if residual <= polish_tol:
            break
        vals = (1.0 - theta) * vals + theta * f_new
    field = Field2D(grid, vals, nonneg=True)
    psi = potential_free_grid(field, params)
    e0 = energy_E0(field, profile, params)
    return Limiting2DState(field=field, psi=psi, mu=mu, E0=e0, s=sol.s,
                           p=sol.p, L=sol.L, kappa=kappa,
                           polish_residual=residual)


def linearized_apply(phi: Field2D, state: Limiting2DState,
                     include_mean_term=True) -> Field2D:
    """Apply  phi -> phi - p L_g (psi0 - mu)_+^{p-1} (G phi - A_g mu/kappa int phi).

    The coefficient vanishes outside the ground-state support, so the operator
    is the identity there.  Requires p > 1 (continuous coefficient)."""
    if state.p <= 1.0:
        raise RegimeError("linearized operator needs p > 1")
    if phi.grid != state.field.grid:
        raise DomainError("phi must live on the state's grid")
    profile = state.profile
    coeff = profile.p * profile.L_gamma * np.clip(
        state.psi - state.mu, 0.0, None) ** (profile.p - 1.0)
    gphi = potential_free_grid(phi, state.params)
    out = phi.values - coeff * gphi
    if include_mean_term:
        consts = compute_struct_constants(state.s, state.p, L=state.L,
                                          kappa=state.kappa)
        mean = float(np.sum(phi.values) * phi.grid.cell_area)
        out = out + coeff * (consts.A_gamma * state.mu / state.kappa) * mean
    return Field2D(phi.grid, out)


def translational_mode(state: Limiting2DState, axis=2) -> Field2D:
    """Centered-difference derivative of the ground state (a discrete element
    of the linearized operator's kernel direction)."""
    v = state.field.values
    d = np.zeros_like(v)
    if axis == 2:
        d[1:-1, :] = (v[2:, :] - v[:-2, :]) / (2.0 * state.field.grid.h2)
    else:
        d[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2.0 * state.field.grid.h1)
    return Field2D(state.field.grid, d)


# ---------------------------------------------------------------------------
# projected minimum singular value of the linearized operator


def _constraint_basis(grid, mask):
    X1, X2 = grid.centers()
    cols = []
    for w in (np.ones_like(X1), X1, X2):
        v = (w * mask).ravel()
        cols.append(v / np.linalg.norm(v))
    Q, _ = np.linalg.qr(np.column_stack(cols))
    return Q


def spectral_gap_estimate(state: Limiting2DState, collar=2, method="auto",
                          max_cells=6000, iters=30, cg_tol=1e-8,
                          seed=7, projection=True):
    """Minimum singular value of the linearized operator restricted to cells
    carrying its coefficient (plus a collar), projected onto
    {int phi = int x1 phi = int x2 phi = 0}.

    method "dense" assembles the operator (capped at max_cells cells);
    "iterative" runs matrix-free inverse iteration with CG on the normal
    equations, each apply being one FFT potential evaluation.
    """
    profile = state.profile
    if profile.p <= 1.0:
        raise RegimeError("spectral gap needs p > 1")
    grid = state.field.grid
    coeff = profile.p * profile.L_gamma * np.clip(
        state.psi - state.mu, 0.0, None) ** (profile.p - 1.0)
    active = coeff > 0.0
    if not active.any():
        # operator reduces to the identity
        return {"gap": 1.0, "n_cells": 0, "method": method}
    mask = binary_dilation(active, iterations=collar)
    n_cells = int(mask.sum())
    consts = compute_struct_constants(state.s, state.p, L=state.L,
                                      kappa=state.kappa)
    r_mean = consts.A_gamma * state.mu / state.kappa
    a = grid.cell_area

    if method == "auto":
        method = "dense" if n_cells <= 3000 else "iterative"
    if method == "dense":
        if n_cells > max_cells:
            raise ResourceLimitError(
                f"dense assembly of {n_cells} cells exceeds cap {max_cells}")
        return _gap_dense(state, coeff, mask, r_mean, a, projection)
    return _gap_iterative(state, coeff, mask, r_mean, a, projection,
                          iters, cg_tol, seed, n_cells)


def _gap_dense(state, coeff, mask, r_mean, a, projection):
    grid = state.field.grid
    X1, X2 = grid.centers()
    xs = np.column_stack([X1[mask], X2[mask]])
    c = coeff[mask]
    n = xs.shape[0]
    d2 = ((xs[:, None, :] - xs[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, 1.0)
    params = state.params
    M = params.c_s * d2 ** (params.s - 1.0) * a
    np.fill_diagonal(M, singular_cell_weight(grid.h1, params))
    K = c[:, None] * (M - r_mean * a)
    L = np.eye(n) - K
    sv_all = np.linalg.svd(L, compute_uv=False)
    if not projection:
        return {"gap": float(sv_all[-1]), "n_cells": n, "method": "dense",
                "singular_values_smallest": sorted(sv_all)[:6]}
    cols = []
    for w in (np.ones(n), xs[:, 0], xs[:, 1]):
        cols.append(w / np.linalg.norm(w))
    Q, _ = np.linalg.qr(np.column_stack(cols))
    P = np.eye(n) - Q @ Q.T
    B = L @ P
    sv = np.linalg.svd(B, compute_uv=False)
    # the 3 constraint directions contribute 3 exact zeros; drop them
    gap = float(np.sort(sv)[3])
    return {"gap": gap, "n_cells": n, "method": "dense",
            "singular_values_smallest": list(np.sort(sv)[:6]),
            "unprojected_smallest": sorted(sv_all)[:6]}


def _gap_iterative(state, coeff, mask, r_mean, a, projection, iters,
                   cg_tol, seed, n_cells):
    grid = state.field.grid
    params = state.params
    Q = _constraint_basis(grid, mask) if projection else None
    flat_mask = mask.ravel()

    def project(v):
        v = v * flat_mask
        if Q is not None:
            v = v - Q @ (Q.T @ v)
        return v

    def pot(v):
        f = Field2D(grid, v.reshape(grid.ny, grid.nx))
        return potential_free_grid(f, params).ravel()

    cflat = coeff.ravel()

    def apply_L(v):
        gv = pot(v)
        return v - cflat * (gv - r_mean * a * v.sum())

    def apply_Lt(v):
        cv = cflat * v
        return v - pot(cv) + r_mean * a * cv.sum()

    def apply_B(v):
        return project(apply_Lt(apply_L(project(v))))

    rng = np.random.default_rng(seed)
    n = grid.nx * grid.ny
    v = project(rng.standard_normal(n))
    v /= np.linalg.norm(v)
    lam = None
    for _ in range(iters):
        z = _cg(apply_B, v, tol=cg_tol, max_iter=600, project=project)
        z = project(z)
        nz = np.linalg.norm(z)
        if nz == 0:
            break
        v = z / nz
        lam = float(v @ apply_B(v))
    return {"gap": math.sqrt(max(lam, 0.0)), "n_cells": n_cells,
            "method": "iterative"}


def _cg(apply_A, b, tol, max_iter, project):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b_norm = math.sqrt(float(b @ b))
    for _ in range(max_iter):
        Ap = apply_A(p)
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= tol * b_norm:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x
