"""Closed-form reference values computed independently of the package."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

CATALAN = 0.915965594177219015054603514932384110774

# Ronkin functions at B = 0: the Mahler measures of 1 + x + y and 1 + x + y - xy.
RONKIN_ORIGIN = {
    "honeycomb": 0.3230659472194505,
    "square": 2.0 * CATALAN / math.pi,
}


def lobachevsky(x: float) -> float:
    """``L(x) = -int_0^x log|2 sin t| dt``."""
    if x == 0.0:
        return 0.0
    value, _ = quad(lambda t: math.log(abs(2.0 * math.sin(t))), 0.0, x, limit=200)
    return -value


def lozenge_sigma(rho1: float, rho2: float) -> float:
    """Honeycomb surface tension ``-(1/pi) (L(pi rho1) + L(pi rho2) + L(pi rho3))``."""
    rho3 = 1.0 - rho1 - rho2
    return -(lobachevsky(math.pi * rho1) + lobachevsky(math.pi * rho2) + lobachevsky(math.pi * rho3)) / math.pi


def lozenge_hessian(rho1: float, rho2: float) -> np.ndarray:
    """Second derivatives of :func:`lozenge_sigma`."""
    c1, c2 = 1.0 / math.tan(math.pi * rho1), 1.0 / math.tan(math.pi * rho2)
    c3 = 1.0 / math.tan(math.pi * (1.0 - rho1 - rho2))
    return math.pi * np.array([[c1 + c3, c3], [c3, c2 + c3]])
