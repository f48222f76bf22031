"""Vorticity profile f, its primitive-dual J, and structural constants.

The concrete profile is the power law f(t) = t_+^p with dual
J(t) = L t^gamma, gamma = 1 + 1/p.  Constructing J from f as the primitive
of f^{-1} gives the canonical coefficient L = p/(p+1), for which
(J')^{-1}(tau) = tau_+^p exactly.  A duck-typed GeneralProfile carries
arbitrary (f, f^{-1}, J, (J')^{-1}) closures for the existence-level solver;
identity checks that rely on scaling algebra are gated to the power law.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConstantError, DomainError, ParameterError
from .kernels import riesz_constant


@dataclass(frozen=True)
class PowerProfile:
    """f(t) = t_+^p together with J(t) = L t^(1+1/p)."""

    p: float
    s: float
    L: float = None  # canonical p/(p+1) unless overridden

    def __post_init__(self):
        if self.p <= 0:
            raise ParameterError("profile exponent p must be positive")
        if not 0 < self.s < 1:
            raise ParameterError("order s must lie in (0, 1)")
        if self.L is None:
            object.__setattr__(self, "L", self.p / (self.p + 1.0))
        if self.L <= 0:
            raise ParameterError("J coefficient L must be positive")

    @property
    def gamma(self):
        return 1.0 + 1.0 / self.p

    @property
    def L_gamma(self):
        """(1/(L*gamma))^(1/(gamma-1)); equals 1 for the canonical L."""
        return (1.0 / (self.L * self.gamma)) ** (1.0 / (self.gamma - 1.0))

    @property
    def is_power(self):
        return True

    @property
    def hypotheses_ok(self):
        """Exact sublinear-growth test p < 1/(1-s)."""
        return self.p < 1.0 / (1.0 - self.s)

    @property
    def uniqueness_regime(self):
        """p in (1, 1/(1-s)): uniqueness and stability results apply.
        p in (0, 1] is accepted by the solvers with no uniqueness guarantee."""
        return 1.0 < self.p < 1.0 / (1.0 - self.s)

    # -- pointwise maps (all accept scalars or arrays) --

    def f(self, t):
        return np.clip(t, 0.0, None) ** self.p

    def f_inverse(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0):
            raise DomainError("f^{-1} is only defined on [0, inf)")
        return tau ** (1.0 / self.p)

    def J(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("J is only defined on [0, inf) for this profile")
        return self.L * t ** self.gamma

    def Jprime(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("J' is only defined on [0, inf)")
        return self.L * self.gamma * t ** (self.gamma - 1.0)

    def Jprime_inverse(self, tau):
        """(J')^{-1}(tau) = (tau / (L*gamma))_+^p = L_gamma * tau_+^p."""
        return self.L_gamma * np.clip(tau, 0.0, None) ** self.p


@dataclass(frozen=True)
class GeneralProfile:
    """Arbitrary profile closures for the existence-level solver."""

    f: callable
    f_inverse: callable
    J: callable
    Jprime_inverse: callable

    @property
    def is_power(self):
        return False


def validate_hypotheses(profile, n_samples=48):
    """Report on the profile growth hypotheses.

    Samples t -> t^(-1/(1-s)) f(t) on log grids near 0 and infinity and
    reports the divergence / decay trends; for the power law this reduces to
    the exact test p < 1/(1-s).
    """
    s = profile.s
    q = 1.0 / (1.0 - s)
    t_small = np.logspace(-8, -1, n_samples)
    t_large = np.logspace(1, 8, n_samples)
    g_small = t_small ** (-q) * profile.f(t_small)
    g_large = t_large ** (-q) * profile.f(t_large)
    diverges_at_zero = bool(np.all(np.diff(g_small) < 0)) and g_small[0] > g_small[-1]
    decays_at_inf = bool(np.all(np.diff(g_large) < 0)) and g_large[-1] < g_large[0]
    report = {
        "s": s,
        "critical_exponent": q,
        "diverges_at_zero": diverges_at_zero,
        "decays_at_infinity": decays_at_inf,
        "passes": diverges_at_zero and decays_at_inf,
    }
    if getattr(profile, "is_power", False):
        report["p"] = profile.p
        report["passes"] = bool(profile.p < q)
        report["exact_test"] = f"p < 1/(1-s): {profile.p} < {q}"
        report["uniqueness_regime"] = profile.uniqueness_regime
    return report


@dataclass(frozen=True)
class StructConstants:
    """Closed-form constants of the power-law variational identities."""

    s: float
    p: float
    gamma: float
    A_gamma: float
    B_gamma: float
    C_gamma: float
    L_gamma: float
    d0: float
    kappa: float
    W: float
    c_s: float


def compute_struct_constants(s, p, L=None, kappa=1.0, W=1.0) -> StructConstants:
    """Evaluate gamma = 1 + 1/p and the identity coefficients

        A = (2 - gamma - s*gamma) / (2 - s - gamma)
        B = (2 - s)/(s - 1) - (2 - gamma - gamma*s) / (2 (s-1)(2 - s - gamma))
        C = -(2 - gamma - gamma*s) / (2 (2 - s - gamma))

    together with the limiting half-separation
    d0 = ((1-s) c_s kappa / (2^(2-2s) W))^(1/(3-2s)).
    """
    prof = PowerProfile(p=p, s=s, L=L)
    gamma = prof.gamma
    denom = 2.0 - s - gamma
    if abs(denom) < 1e-14:
        raise DegenerateConstantError(
            f"2 - s - gamma vanishes at s={s}, p={p}; identity constants blow up")
    if kappa <= 0 or W <= 0:
        raise ParameterError("kappa and W must be positive")
    num = 2.0 - gamma - s * gamma
    A = num / denom
    C = -num / (2.0 * denom)
    B = (2.0 - s) / (s - 1.0) - num / (2.0 * (s - 1.0) * denom)
    c_s = riesz_constant(s)
    d0 = ((1.0 - s) * c_s * kappa / (2.0 ** (2.0 - 2.0 * s) * W)) ** (
        1.0 / (3.0 - 2.0 * s))
    return StructConstants(
        s=s, p=p, gamma=gamma, A_gamma=A, B_gamma=B, C_gamma=C,
        L_gamma=prof.L_gamma, d0=d0, kappa=kappa, W=W, c_s=c_s,
    )
