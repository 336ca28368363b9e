"""First-order lowpass synapse."""

from __future__ import annotations

import math
from dataclasses import dataclass


def lowpass_coefficients(tau: float, dt: float) -> tuple[float, float]:
    """Return ``(a, b)`` such that ``y[k+1] = a*y[k] + b*x[k]``.

    ``tau == 0`` is a passthrough, ``(0, 1)``.
    """
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if tau == 0:
        return 0.0, 1.0
    a = math.exp(-dt / tau)
    return a, 1.0 - a


@dataclass(frozen=True)
class Lowpass:
    tau: float

    @property
    def has_state(self) -> bool:
        return self.tau > 0

    def coefficients(self, dt: float) -> tuple[float, float]:
        return lowpass_coefficients(self.tau, dt)
