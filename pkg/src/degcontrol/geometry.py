"""Degeneracy law, gradient weight, moving domain and control geometry.

The state equation lives on a moving interval (0, l(t)).  Rescaling
x = x'/l(t) maps it onto the fixed cylinder (0,1) x (0,T), where the
equation keeps a power-law diffusion a(x) = x**alpha (weakly degenerate,
alpha < 1) and picks up three time coefficients

    b(t) = a(l(t)) / l(t)**2,   B(t) = l'(t) / l(t),   C(t) = beta(l(t)) / l(t).

All objects here are immutable value types; solver modules share them freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DegeneracySpec",
    "GradientWeightSpec",
    "MovingDomainSpec",
    "ControlGeometry",
    "beta_condition_report",
]


@dataclass(frozen=True)
class DegeneracySpec:
    """Power-law diffusion a(x) = x**alpha with 0 < alpha < 1.

    The multiplicative property a(x*y) = a(x) a(y) forces the power-law
    form, which we use to evaluate a(l(t)) also for l(t) > 1.  The
    structural constant K in x a'(x) <= K a(x) equals alpha.
    """

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")

    @property
    def K(self) -> float:
        return self.alpha

    def a(self, x):
        """Evaluate a(x) = x**alpha; x may be scalar or array, x >= 0."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("a(x) requires x >= 0")
        return x**self.alpha

    def a_prime(self, x):
        """a'(x) = alpha x**(alpha-1) on (0, inf)."""
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("a'(x) requires x > 0")
        return self.alpha * x ** (self.alpha - 1.0)


@dataclass(frozen=True)
class GradientWeightSpec:
    """Gradient weight beta(x) = c * x**b_exp with b_exp > 1.

    Three pointwise conditions are required on the grid:

        beta**2 <= a,   (beta**2)' <= 2 a',   beta' <= M (finite).

    For a = x**alpha with alpha < 1 the raw beta = x**b violates the
    derivative condition away from the origin, so we scale by the largest
    constant c <= 1 making all conditions hold nodewise (clipping).
    """

    b_exp: float = 2.0
    clip_enabled: bool = True
    # filled in by `attach`, kept out of __init__
    clip_factor: float = field(default=1.0, compare=False)
    M: float = field(default=np.nan, compare=False)

    def __post_init__(self):
        if self.b_exp <= 1.0:
            raise ValueError(f"b_exp must exceed 1, got {self.b_exp}")

    def attach(self, deg: DegeneracySpec, n_check: int = 512) -> "GradientWeightSpec":
        """Return a copy with clip_factor and the derivative bound M computed.

        The largest admissible c for beta = c x**b is found in closed form:
        beta**2 <= a needs c**2 x**(2b) <= x**alpha on (0,1], worst at x=1,
        so c <= 1; (beta**2)' <= 2a' needs 2 b c**2 x**(2b-1) <= 2 alpha
        x**(alpha-1), worst at x=1, so c**2 <= alpha/b.
        """
        c = 1.0
        if self.clip_enabled:
            c = min(1.0, np.sqrt(deg.alpha / self.b_exp))
        # verify on a node sweep and shrink if roundoff bites
        x = np.linspace(0.0, 1.0, n_check)[1:]
        for _ in range(50):
            ok = (
                np.all((c * x**self.b_exp) ** 2 <= deg.a(x) * (1 + 1e-12))
                and np.all(
                    2 * self.b_exp * c**2 * x ** (2 * self.b_exp - 1)
                    <= 2 * deg.a_prime(x) * (1 + 1e-12)
                )
            )
            if ok:
                break
            c *= 1.0 - 1e-12
        m_bound = float(np.max(self.b_exp * c * x ** (self.b_exp - 1.0)))
        return GradientWeightSpec(
            b_exp=self.b_exp,
            clip_enabled=self.clip_enabled,
            clip_factor=c,
            M=m_bound,
        )

    def beta(self, x):
        """Evaluate beta(x) = clip_factor * x**b_exp, x >= 0."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("beta(x) requires x >= 0")
        return self.clip_factor * x**self.b_exp

    def beta_prime(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("beta'(x) requires x >= 0")
        return self.clip_factor * self.b_exp * x ** (self.b_exp - 1.0)


def beta_condition_report(gw: GradientWeightSpec, deg: DegeneracySpec, n: int = 512) -> dict:
    """Nodewise check of the three gradient-weight conditions.

    Returns a dict with boolean verdicts and the largest violation margin
    of the raw (unclipped) beta for reference.
    """
    x = np.linspace(0.0, 1.0, n)[1:]
    b = gw.beta(x)
    raw = x**gw.b_exp
    report = {
        "beta_sq_le_a": bool(np.all(b**2 <= deg.a(x) * (1 + 1e-12))),
        "beta_sq_prime_le_2a_prime": bool(
            np.all(
                2 * gw.b_exp * gw.clip_factor**2 * x ** (2 * gw.b_exp - 1)
                <= 2 * deg.a_prime(x) * (1 + 1e-12)
            )
        ),
        "beta_prime_bounded": np.isfinite(gw.M),
        "M": float(gw.M),
        "clip_factor": float(gw.clip_factor),
        "raw_violation_margin": float(
            np.max(2 * gw.b_exp * raw**2 / x - 2 * deg.a_prime(x) * x**0)
        ),
    }
    report["all_ok"] = (
        report["beta_sq_le_a"]
        and report["beta_sq_prime_le_2a_prime"]
        and report["beta_prime_bounded"]
    )
    return report


_ELL_FAMILIES = ("constant", "affine", "exponential", "sinusoidal")


@dataclass(frozen=True)
class MovingDomainSpec:
    """Moving-interval length l(t) from a small parametric family.

    family:
      constant     l(t) = l0
      affine       l(t) = l0 * (1 + k t)
      exponential  l(t) = l0 * exp(k t)
      sinusoidal   l(t) = l0 * (1 + k sin(w t)),  |k| < 1

    Each family has an analytic derivative, so no numerical
    differentiation of user input is ever needed.
    """

    T: float = 1.0
    family: str = "affine"
    l0: float = 1.0
    k: float = 0.25
    w: float = np.pi

    def __post_init__(self):
        if self.family not in _ELL_FAMILIES:
            raise ValueError(f"unknown ell family {self.family!r}; options: {_ELL_FAMILIES}")
        if self.T <= 0 or self.l0 <= 0:
            raise ValueError("T and l0 must be positive")
        if self.family == "sinusoidal" and abs(self.k) >= 1:
            raise ValueError("sinusoidal family needs |k| < 1 to keep l > 0")

    def ell(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            return self.l0 * np.ones_like(t)
        if self.family == "affine":
            return self.l0 * (1.0 + self.k * t)
        if self.family == "exponential":
            return self.l0 * np.exp(self.k * t)
        return self.l0 * (1.0 + self.k * np.sin(self.w * t))

    def ell_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            return np.zeros_like(t)
        if self.family == "affine":
            return self.l0 * self.k * np.ones_like(t)
        if self.family == "exponential":
            return self.l0 * self.k * np.exp(self.k * t)
        return self.l0 * self.k * self.w * np.cos(self.w * t)

    def validate(self, n: int = 257) -> None:
        t = np.linspace(0.0, self.T, n)
        l = self.ell(t)
        if np.any(l <= 0):
            raise ValueError("l(t) must stay positive on [0,T]")

    def coefficients(self, deg: DegeneracySpec, gw: GradientWeightSpec, t):
        """Cylinder coefficients (b(t), B(t), C(t)) at time t."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-14) or np.any(t > self.T + 1e-14):
            raise ValueError("t outside [0,T]")
        l = self.ell(t)
        if np.any(l <= 0):
            raise ValueError("l(t) <= 0: invalid moving domain")
        b_t = deg.a(l) / l**2
        big_b = self.ell_prime(t) / l
        c_t = gw.beta(l) / l
        return b_t, big_b, c_t

    def jacobian(self, t):
        """|Jac(tau_t)| = l(t) for the 1-D rescaling."""
        return self.ell(t)

    def pullback(self, x_phys, t):
        """Physical coordinate x' in (0, l(t)) -> cylinder coordinate x'/l(t)."""
        x_phys = np.asarray(x_phys, dtype=float)
        l = float(self.ell(t))
        if np.any(x_phys < -1e-14) or np.any(x_phys > l * (1 + 1e-14)):
            raise ValueError("sample points outside (0, l(t))")
        return x_phys / l

    def pushforward(self, x_cyl, t):
        """Cylinder coordinate in (0,1) -> physical coordinate x * l(t)."""
        x_cyl = np.asarray(x_cyl, dtype=float)
        if np.any(x_cyl < -1e-14) or np.any(x_cyl > 1 + 1e-14):
            raise ValueError("sample points outside (0,1)")
        return x_cyl * float(self.ell(t))


@dataclass(frozen=True)
class ControlGeometry:
    """Control and observation windows, in cylinder coordinates.

    O is the leader window, O1/O2 the follower windows (disjoint from O),
    and Od the single shared observation window, which must meet O.
    """

    O: tuple = (0.3, 0.5)
    O1: tuple = (0.55, 0.7)
    O2: tuple = (0.75, 0.9)
    Od: tuple = (0.4, 0.6)

    def __post_init__(self):
        for name in ("O", "O1", "O2", "Od"):
            a, b = getattr(self, name)
            if not (0.0 <= a < b <= 1.0):
                raise ValueError(f"window {name}={getattr(self, name)} not inside (0,1)")
        for name in ("O1", "O2"):
            if _overlap(getattr(self, name), self.O):
                raise ValueError(f"follower window {name} must be disjoint from O")
        if not _overlap(self.Od, self.O):
            raise ValueError("observation window Od must intersect O")

    def indicator(self, window: str, x: np.ndarray) -> np.ndarray:
        a, b = getattr(self, window)
        return ((x > a) & (x < b)).astype(float)


def _overlap(w1, w2) -> bool:
    return max(w1[0], w2[0]) < min(w1[1], w2[1])
