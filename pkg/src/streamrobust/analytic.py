"""Closed forms for the population absolute loss under Gaussian data.

Conditional on the corruption value b, the residual y - <x, theta> is
Gaussian with mean b and standard deviation s = sqrt(sigma^2 + sigma_theta^2),
where sigma_theta = ||theta - theta*||_H is the prediction error scale. Its
absolute value therefore follows a folded normal law, whose mean is available
in closed form through the Gauss error function. Averaging the folded-normal
mean over the corruption law gives the population objective

    F(theta) = E_b[ sqrt(2/pi) s exp(-b^2/(2 s^2)) + b erf(b / (sqrt(2) s)) ],

a smooth function of theta even though the pointwise loss is not. Expectations
over point-mass components are exact; uniform components are integrated with
fixed-order Gauss-Legendre quadrature, which converges geometrically here
because the integrands are entire.

The derivative structure is what the optimizer relies on: the gradient is a
scalar multiple of H (theta - theta*), with the multiplier depending on theta
only through sigma_theta. `gradient_scale` evaluates that multiplier. All
functions are pure and cache nothing, so they stay easy to audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf

from .core import (
    OutlierDistribution,
    PointMass,
    RegressionModel,
    Uniform,
)

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

_MIN_QUAD_ORDER = 16
DEFAULT_QUAD_ORDER = 64


@lru_cache(maxsize=None)
def _leggauss(order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, weights


def _check_order(order: int) -> int:
    order = int(order)
    if order < _MIN_QUAD_ORDER:
        raise ValueError(f"quadrature order must be >= {_MIN_QUAD_ORDER}, got {order}")
    return order


def conditional_outlier_mean(dist: OutlierDistribution, fn, order: int = DEFAULT_QUAD_ORDER) -> float:
    """E[fn(b) | b != 0] for a vectorized fn."""
    order = _check_order(order)
    total = 0.0
    for weight, comp in dist.components:
        if isinstance(comp, PointMass):
            total += weight * float(fn(np.asarray(comp.value)))
        else:
            x, w = _leggauss(order)
            nodes = 0.5 * (comp.hi + comp.lo) + 0.5 * (comp.hi - comp.lo) * x
            # mean over [lo, hi]: the interval length cancels the jacobian
            total += weight * 0.5 * float(w @ fn(nodes))
    return total


def full_outlier_mean(dist: OutlierDistribution, fn, order: int = DEFAULT_QUAD_ORDER) -> float:
    """E[fn(b)] over the full law: mass 1 - eta at zero plus eta times the mixture."""
    clean = float(fn(np.asarray(0.0)))
    if dist.eta == 0.0:
        return clean
    return (1.0 - dist.eta) * clean + dist.eta * conditional_outlier_mean(dist, fn, order)


def outlier_gauss_moment(dist: OutlierDistribution, s: float, order: int = DEFAULT_QUAD_ORDER) -> float:
    """E[exp(-b^2 / (2 s^2)) | b != 0], a value in (0, 1]."""
    if not (s > 0):
        raise ValueError(f"scale s must be > 0, got {s}")
    inv = 0.5 / (s * s)
    return conditional_outlier_mean(dist, lambda b: np.exp(-inv * b * b), order)


def effective_eta(dist: OutlierDistribution, sigma: float, order: int = DEFAULT_QUAD_ORDER) -> float:
    """Effective corruption level eta * (1 - E[exp(-b^2/(2 sigma^2)) | b != 0]).

    Corruptions much smaller than sigma barely move the residual law, and this
    quantity discounts them accordingly; it is what the curvature of the
    objective at theta* actually depends on.
    """
    if not (sigma > 0):
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if dist.eta == 0.0:
        return 0.0
    return dist.eta * (1.0 - outlier_gauss_moment(dist, sigma, order))


def pred_error_sigma(theta: np.ndarray, model: RegressionModel) -> float:
    """Prediction error scale ||theta - theta*||_H."""
    delta = np.asarray(theta, dtype=float).reshape(-1) - model.theta_star
    if delta.size != model.d:
        raise ValueError(f"theta has dimension {np.asarray(theta).size}, model has {model.d}")
    h = model.design.h
    return math.sqrt(max(float(delta @ h @ delta), 0.0))


def expected_loss_radial(z: float, model: RegressionModel, order: int = DEFAULT_QUAD_ORDER) -> float:
    """Population loss as a function of the error scale z = sigma_theta alone."""
    s2 = model.sigma * model.sigma + z * z
    s = math.sqrt(s2)

    def folded_mean(b):
        return SQRT_2_OVER_PI * s * np.exp(-b * b / (2.0 * s2)) + b * erf(b / (math.sqrt(2.0) * s))

    return full_outlier_mean(model.outliers, folded_mean, order)


def expected_loss(theta: np.ndarray, model: RegressionModel, order: int = DEFAULT_QUAD_ORDER) -> float:
    """Population value of E|y - <x, theta>|."""
    return expected_loss_radial(pred_error_sigma(theta, model), model, order)


def gradient_scale(z: float, model: RegressionModel, order: int = DEFAULT_QUAD_ORDER) -> float:
    """Scalar multiplier in the gradient: grad F(theta) = gradient_scale(sigma_theta) H (theta - theta*).

    Equals sqrt(2/pi) (sigma^2 + z^2)^{-1/2} E[exp(-b^2/(2(sigma^2+z^2)))] over
    the full corruption law. At z = 0 this is sqrt(2/pi) (1 - effective_eta) / sigma.
    """
    if z < 0:
        raise ValueError(f"error scale must be >= 0, got {z}")
    s2 = model.sigma * model.sigma + z * z
    moment = full_outlier_mean(model.outliers, lambda b: np.exp(-b * b / (2.0 * s2)), order)
    return SQRT_2_OVER_PI * moment / math.sqrt(s2)


def gradient(theta: np.ndarray, model: RegressionModel, order: int = DEFAULT_QUAD_ORDER) -> np.ndarray:
    """Gradient of the population loss at theta."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    delta = theta - model.theta_star
    if delta.size != model.d:
        raise ValueError(f"theta has dimension {theta.size}, model has {model.d}")
    h = model.design.h
    hdelta = h @ delta
    z = math.sqrt(max(float(delta @ hdelta), 0.0))
    return gradient_scale(z, model, order) * hdelta


def hessian_at_optimum(model: RegressionModel, order: int = DEFAULT_QUAD_ORDER) -> np.ndarray:
    """Hessian of the population loss at theta*: sqrt(2/pi) (1 - effective_eta) / sigma * H."""
    coeff = SQRT_2_OVER_PI * (1.0 - effective_eta(model.outliers, model.sigma, order)) / model.sigma
    return coeff * model.design.h


@dataclass(frozen=True)
class SmoothedObjective:
    """Bundle of a model with a quadrature order, exposing the closed forms."""

    model: RegressionModel
    quadrature_order: int = DEFAULT_QUAD_ORDER

    def __post_init__(self):
        _check_order(self.quadrature_order)

    def pred_error_sigma(self, theta) -> float:
        return pred_error_sigma(theta, self.model)

    def value(self, theta) -> float:
        return expected_loss(theta, self.model, self.quadrature_order)

    def radial_value(self, z: float) -> float:
        return expected_loss_radial(z, self.model, self.quadrature_order)

    def scale(self, z: float) -> float:
        return gradient_scale(z, self.model, self.quadrature_order)

    def grad(self, theta) -> np.ndarray:
        return gradient(theta, self.model, self.quadrature_order)

    def hessian_at_optimum(self) -> np.ndarray:
        return hessian_at_optimum(self.model, self.quadrature_order)

    def effective_eta(self) -> float:
        return effective_eta(self.model.outliers, self.model.sigma, self.quadrature_order)
