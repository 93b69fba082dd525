"""Enthalpy nonlinearities of the mushy-region Stefan problem.

Temperature theta and enthalpy x are related by x = gamma_tilde(theta), where
the Heaviside jump of size l is smoothed into a linear ramp of width delta.
Everything downstream is a composition with the exact piecewise-linear inverse:

    Psi   = K o gamma_tilde^-1           (flux potential)
    Gamma = eta o gamma_tilde^-1         (turbulent transport profile)
    g(x)  = 1/4 int_0^x Gamma'(y)^2 dy   (Ito corrector)

eta vanishes up to theta = eps, ramps in with a quadratic blend on
[eps, 2 eps], grows with slope eta_slope and optionally bends over to the
level eta_sat with a mirrored blend of width eps. Every map is a piecewise
polynomial in theta, so g and the primitive of Gamma are integrated exactly.
"""
import logging
import math
from functools import lru_cache
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.interpolate import PPoly

log = logging.getLogger(__name__)


class PhaseParameterException(Exception):
    """Phase parameters violate the structural hypotheses

    min(C1, C2) must exceed 1 so that the inverse enthalpy has slope below one.
    """
    pass


class PhaseFunctions(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    C1: float = Field(2.0, gt=0, description="specific heat of the solid phase")
    C2: float = Field(2.0, gt=0, description="specific heat of the liquid phase")
    k1: float = Field(1.0, gt=0, description="thermal conductivity of the solid phase")
    k2: float = Field(0.5, gt=0, description="thermal conductivity of the liquid phase")
    l: float = Field(1.0, ge=0, description="latent heat (0 removes the phase jump)")
    delta: float = Field(0.1, description="mushy-region width in temperature units")
    eps: float = Field(0.05, description="temperature at which turbulence sets in")
    eta_slope: float = Field(1.0, gt=0, description="slope of eta past the onset blend")
    eta_sat: Optional[float] = Field(
        None, gt=0, description="saturation level of eta (unset or .inf means no saturation)")

    @field_validator('eta_sat')
    @classmethod
    def _infinite_is_unsaturated(cls, v: Optional[float]) -> Optional[float]:
        return None if v is not None and math.isinf(v) else v

    @model_validator(mode='after')
    def _check_hypotheses(self) -> 'PhaseFunctions':
        if min(self.C1, self.C2) <= 1:
            raise PhaseParameterException(
                f"min(C1, C2) = {min(self.C1, self.C2)} must exceed 1")
        if self.delta <= 0:
            raise PhaseParameterException(f"delta must be positive, got {self.delta}")
        if self.eps <= 0:
            raise PhaseParameterException(f"eps must be positive, got {self.eps}")
        if self.eta_sat is not None and self.eta_sat < self.eta_slope * self.eps:
            raise PhaseParameterException(
                f"eta_sat = {self.eta_sat} leaves no room for the onset blend; "
                f"it must be at least eta_slope * eps = {self.eta_slope * self.eps}")
        return self

    @property
    def pieces(self) -> '_Pieces':
        return _pieces_for(self.C1, self.C2, self.l, self.delta,
                           self.eps, self.eta_slope, self.eta_sat)

    # Structural constants

    @property
    def psi0(self) -> float:
        """Lower bound on Psi'"""
        return min(self.k1, self.k2) / max(self.C1, self.C2 + self.l / self.delta)

    @property
    def psi_lip(self) -> float:
        return max(self.k1, self.k2) / min(self.C1, self.C2)

    @property
    def gamma_lip(self) -> float:
        return self.eta_slope / min(self.C1, self.C2)

    @property
    def g_lip(self) -> float:
        return 0.25 * self.gamma_lip ** 2

    @property
    def mushy_top(self) -> float:
        """Enthalpy at which the mushy ramp ends"""
        return self.C2 * self.delta + self.l

    @property
    def onset_enthalpy(self) -> float:
        """gamma_tilde(eps): Gamma, g and their derivatives vanish at or below it"""
        return float(self.gamma_tilde(self.eps))

    # Enthalpy and its inverse

    def gamma_tilde(self, r):
        r = np.asarray(r, dtype=float)
        ramp = np.clip(r / self.delta, 0.0, 1.0)
        return np.where(r <= 0, self.C1 * r, self.C2 * r + self.l * ramp)

    def gamma_tilde_prime(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 0, self.C1,
                        np.where(r < self.delta, self.C2 + self.l / self.delta, self.C2))

    def gamma_tilde_inv(self, x):
        x = np.asarray(x, dtype=float)
        mushy_slope = self.C2 + self.l / self.delta
        return np.where(x <= 0, x / self.C1,
                        np.where(x < self.mushy_top, x / mushy_slope,
                                 (x - self.l) / self.C2))

    # Flux potential

    def K_of(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 0, self.k1 * r, self.k2 * r)

    def K_prime(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 0, self.k1, self.k2)

    def Psi(self, x):
        return self.K_of(self.gamma_tilde_inv(x))

    def Psi_prime(self, x):
        theta = self.gamma_tilde_inv(x)
        return self.K_prime(theta) / self.gamma_tilde_prime(theta)

    # Turbulent transport profile

    def eta(self, theta):
        return self.pieces.eta(np.asarray(theta, dtype=float))

    def eta_prime(self, theta):
        return self.pieces.eta_prime(np.asarray(theta, dtype=float))

    def Gamma(self, x):
        return self.eta(self.gamma_tilde_inv(x))

    def Gamma_prime(self, x):
        theta = self.gamma_tilde_inv(x)
        return self.eta_prime(theta) / self.gamma_tilde_prime(theta)

    def Gamma_primitive(self, x):
        """int_0^x Gamma(y) dy, exact"""
        return self.pieces.gamma_primitive(self.gamma_tilde_inv(x))

    # Ito corrector

    def g_of(self, x):
        return 0.25 * self.pieces.g_integral(self.gamma_tilde_inv(x))

    def g_prime(self, x):
        return 0.25 * self.Gamma_prime(x) ** 2

    def liquid_fraction(self, x) -> float:
        """Fraction of samples whose temperature is positive"""
        return float(np.mean(self.gamma_tilde_inv(x) > 0))


class _Pieces:
    """Piecewise polynomials in temperature backing eta, g and the primitive of Gamma"""

    def __init__(self, eta_prime: PPoly, g_integral: PPoly, gamma_primitive: PPoly):
        self.eta_prime = eta_prime
        self.eta = eta_prime.antiderivative()
        self.g_integral = g_integral
        self.gamma_primitive = gamma_primitive


@lru_cache(maxsize=64)
def _pieces_for(C1, C2, l, delta, eps, eta_slope, eta_sat) -> _Pieces:
    # eta' is piecewise linear: 0 -> slope over [eps, 2 eps], back to 0 over [a, a + eps]
    eta_knots = [eps, 2 * eps]
    eta_slopes = [0.0, eta_slope]
    if eta_sat is not None:
        a = eta_sat / eta_slope + eps
        eta_knots += [a, a + eps]
        eta_slopes += [eta_slope, 0.0]

    # merge with the kinks of gamma_tilde so the enthalpy slope is constant per piece;
    # the leading knot 0 pins every antiderivative to vanish at theta = 0
    knots = np.unique(np.array([0.0, delta] + eta_knots))
    knots = np.append(knots, knots[-1] + 1.0)

    values = np.interp(knots, eta_knots, eta_slopes, left=0.0, right=eta_slopes[-1])
    widths = np.diff(knots)
    v0 = values[:-1]
    s = (values[1:] - v0) / widths

    mid = 0.5 * (knots[:-1] + knots[1:])
    c = np.where(mid < delta, C2 + l / delta, C2)

    eta_prime = PPoly(np.vstack([s, v0]), knots)

    # g integrand in temperature: eta'(theta)^2 / gamma_tilde'(theta)
    g_integrand = PPoly(np.vstack([s ** 2, 2 * v0 * s, v0 ** 2]) / c, knots)

    # Gamma primitive integrand in temperature: eta(theta) * gamma_tilde'(theta)
    eta = eta_prime.antiderivative()
    gamma_integrand = PPoly(eta.c * c, knots)

    return _Pieces(eta_prime, g_integrand.antiderivative(), gamma_integrand.antiderivative())


DEFAULT_PHASE = PhaseFunctions()
