"""Combine in-sample and out-of-sample bounds into prediction intervals.

If ``M1_L <= p'(beta0 - beta_hat) <= M1_U`` and ``M2_L <= e_T <= M2_U`` then

* ``tau_hat - M1_U - M2_U <= tau_T <= tau_hat - M1_L - M2_L`` and
* ``Y_hat + M1_L + M2_L <= Y_1T(0) <= Y_hat + M1_U + M2_U``.

The arithmetic here never coerces to ``float`` so exact number types
(``fractions.Fraction``) pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UsageError

__all__ = ["Bounds", "PredictionInterval", "assemble_tau", "assemble_counterfactual", "as_bounds"]


@dataclass(frozen=True)
class Bounds:
    """One uncertainty component: ``lower <= quantity <= upper`` at level ``alpha``."""

    lower: object
    upper: object
    alpha: object
    method: str = ""

    def __post_init__(self):
        if self.lower > self.upper:
            raise UsageError(f"bound lower {self.lower} exceeds upper {self.upper}")
        if not 0 <= self.alpha < 1:
            raise UsageError(f"bound level {self.alpha} outside [0, 1)")


def as_bounds(obj, method: str = "") -> Bounds:
    """Accept :class:`Bounds`, in/out-of-sample results or ``(lower, upper, alpha)`` tuples."""
    if isinstance(obj, Bounds):
        return obj
    if hasattr(obj, "M1_L"):
        return Bounds(obj.M1_L, obj.M1_U, obj.alpha1, method or "insample")
    if hasattr(obj, "M2_L"):
        return Bounds(obj.M2_L, obj.M2_U, obj.alpha2, method or obj.approach)
    try:
        lo, hi, alpha = obj
    except (TypeError, ValueError):
        raise UsageError(f"cannot interpret {obj!r} as bounds") from None
    return Bounds(lo, hi, alpha, method)


@dataclass(frozen=True)
class PredictionInterval:
    target: str
    point: object
    lower: object
    upper: object
    alpha1: object
    alpha2: object
    components: tuple = ()

    @property
    def alpha_total(self):
        return self.alpha1 + self.alpha2

    @property
    def level(self):
        return 1 - self.alpha_total

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, value) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "point": float(self.point),
            "lower": float(self.lower),
            "upper": float(self.upper),
            "alpha1": float(self.alpha1),
            "alpha2": float(self.alpha2),
        }


def _components(M1, M2) -> tuple[Bounds, Bounds]:
    b1, b2 = as_bounds(M1), as_bounds(M2)
    if not b1.alpha + b2.alpha < 1:
        raise UsageError(f"levels alpha1={b1.alpha} and alpha2={b2.alpha} leave no coverage")
    return b1, b2


def assemble_tau(tau_hat, M1, M2) -> PredictionInterval:
    """Interval for the treatment effect at level ``1 - alpha1 - alpha2``."""
    b1, b2 = _components(M1, M2)
    lower = tau_hat - b1.upper - b2.upper
    upper = tau_hat - b1.lower - b2.lower
    return PredictionInterval("tau", tau_hat, lower, upper, b1.alpha, b2.alpha, (b1, b2))


def assemble_counterfactual(y_hat0, M1, M2) -> PredictionInterval:
    """Interval for the untreated outcome at level ``1 - alpha1 - alpha2``."""
    b1, b2 = _components(M1, M2)
    lower = b1.lower + b2.lower + y_hat0
    upper = b1.upper + b2.upper + y_hat0
    return PredictionInterval("counterfactual", y_hat0, lower, upper, b1.alpha, b2.alpha, (b1, b2))
