"""Semilinear term F(u, w) and its derivatives up to second order.

The state equation carries F(y, C(t) beta(x) y_x), so F takes the state
value and a weighted gradient as arguments.  All solvers only assume that
F is C^2 with bounded derivatives; the evaluators below are vectorized
callables and the second derivatives feed the eta/theta system behind the
convexity certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["SemilinearF", "fd_consistency_report"]

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _const(c: float) -> Evaluator:
    return lambda u, w: np.full_like(np.asarray(u, dtype=float), c)


@dataclass(frozen=True)
class SemilinearF:
    """Nonlinearity F(u, w) with first and second partial derivatives.

    Evaluators must accept numpy arrays of equal shape and broadcast.
    `bound` is a reported sup bound of all derivatives up to order 2 on
    the sampling box, used only in diagnostics.
    """

    F: Evaluator
    D1: Evaluator
    D2: Evaluator
    D11: Evaluator
    D12: Evaluator
    D21: Evaluator
    D22: Evaluator
    label: str = "custom"
    bound: float = field(default=np.nan, compare=False)

    @classmethod
    def sinusoidal(cls, kappa1: float = 2.0, kappa2: float = 2.0) -> "SemilinearF":
        """F(u,w) = kappa1 sin(u) + kappa2 sin(w); the default nonlinearity.

        C^2 with globally bounded derivatives and F(0,0)=0, and it
        exercises both arguments of F.
        """
        return cls(
            F=lambda u, w: kappa1 * np.sin(u) + kappa2 * np.sin(w),
            D1=lambda u, w: kappa1 * np.cos(u) + 0.0 * w,
            D2=lambda u, w: kappa2 * np.cos(w) + 0.0 * u,
            D11=lambda u, w: -kappa1 * np.sin(u) + 0.0 * w,
            D12=lambda u, w: np.zeros_like(np.asarray(u, dtype=float)),
            D21=lambda u, w: np.zeros_like(np.asarray(u, dtype=float)),
            D22=lambda u, w: -kappa2 * np.sin(w) + 0.0 * u,
            label=f"sinusoidal(k1={kappa1}, k2={kappa2})",
            bound=max(abs(kappa1), abs(kappa2)),
        )

    @classmethod
    def zero(cls) -> "SemilinearF":
        """F == 0; the linear case."""
        z = lambda u, w: np.zeros_like(np.asarray(u, dtype=float))
        return cls(F=z, D1=z, D2=z, D11=z, D12=z, D21=z, D22=z,
                   label="zero", bound=0.0)

    @property
    def is_zero(self) -> bool:
        return self.label == "zero"

    def derivative_bound_report(self, box: float = 4.0, n: int = 2001) -> dict:
        """Sampled sup of |F| and all derivatives on [-box, box]^2."""
        u = np.linspace(-box, box, n)
        w = u[::-1].copy()
        names = ("F", "D1", "D2", "D11", "D12", "D21", "D22")
        sups = {}
        for name in names:
            vals = getattr(self, name)(u, w)
            if not np.all(np.isfinite(vals)):
                raise FloatingPointError(f"{name} not finite on sample box")
            sups[name] = float(np.max(np.abs(vals)))
        sups["all_bounded"] = True
        return sups


def fd_consistency_report(f: SemilinearF, rng: np.random.Generator,
                          samples: int = 64, eps: float = 1e-6) -> dict:
    """Central finite differences of F vs supplied first derivatives.

    Returns max relative mismatch for each partial; the contract asks for
    agreement to 1e-6 relative on random samples.
    """
    u = rng.uniform(-2.0, 2.0, samples)
    w = rng.uniform(-2.0, 2.0, samples)
    scale = 1.0 + np.abs(f.D1(u, w)) + np.abs(f.D2(u, w))
    fd1 = (f.F(u + eps, w) - f.F(u - eps, w)) / (2 * eps)
    fd2 = (f.F(u, w + eps) - f.F(u, w - eps)) / (2 * eps)
    err1 = np.max(np.abs(fd1 - f.D1(u, w)) / scale)
    err2 = np.max(np.abs(fd2 - f.D2(u, w)) / scale)
    # second derivatives, from first-derivative central differences
    fd11 = (f.D1(u + eps, w) - f.D1(u - eps, w)) / (2 * eps)
    fd12 = (f.D1(u, w + eps) - f.D1(u, w - eps)) / (2 * eps)
    fd21 = (f.D2(u + eps, w) - f.D2(u - eps, w)) / (2 * eps)
    fd22 = (f.D2(u, w + eps) - f.D2(u, w - eps)) / (2 * eps)
    errs = {
        "D1": float(err1),
        "D2": float(err2),
        "D11": float(np.max(np.abs(fd11 - f.D11(u, w)) / scale)),
        "D12": float(np.max(np.abs(fd12 - f.D12(u, w)) / scale)),
        "D21": float(np.max(np.abs(fd21 - f.D21(u, w)) / scale)),
        "D22": float(np.max(np.abs(fd22 - f.D22(u, w)) / scale)),
    }
    errs["max"] = max(errs.values())
    return errs
