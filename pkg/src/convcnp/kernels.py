"""Stationary kernels for data generation and for the smoothing layers.

The data-generation kernels are frozen at their published constants (EQ
length scale 0.25, Matern distance rescaling d = 4|x - x'|, weakly
periodic feature frequencies 8*pi).  The model-side smoothing kernels are
separate EQ instances with a trainable log length scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class EQ:
    """Exponentiated-quadratic kernel exp(-0.5 ((x-x')/l)^2)."""

    length_scale: float = 0.25
    amplitude: float = 1.0

    def __call__(self, x, x2):
        d = np.subtract.outer(np.asarray(x, float), np.asarray(x2, float))
        return self.amplitude * np.exp(-0.5 * (d / self.length_scale) ** 2)


@dataclass(frozen=True)
class Matern52:
    """Matern-5/2 with the rescaled distance d = input_scale * |x - x'|.

    (1 + sqrt(5)*d + (5/3)*d^2) exp(-sqrt(5)*d); input_scale 4 is a length
    scale of 0.25.  See :func:`matern52_printed` for the non-PSD variant
    this replaces.
    """

    input_scale: float = 4.0

    def __call__(self, x, x2):
        d = self.input_scale * np.abs(
            np.subtract.outer(np.asarray(x, float), np.asarray(x2, float))
        )
        return (1.0 + np.sqrt(5.0) * d + (5.0 / 3.0) * d**2) * np.exp(
            -np.sqrt(5.0) * d
        )


def matern52_printed(x, x2, input_scale: float = 4.0) -> np.ndarray:
    """The Matern expression with a 4*sqrt(5)*d linear coefficient.

    Kept for reference only: this function is NOT positive definite (Gram
    matrices on random point sets have eigenvalues near -2), so it cannot
    be a covariance.  The working :class:`Matern52` uses the conventional
    sqrt(5)*d coefficient, folding the factor 4 into the distance rescaling
    d = 4|x - x'| instead.
    """
    d = input_scale * np.abs(
        np.subtract.outer(np.asarray(x, float), np.asarray(x2, float))
    )
    return (1.0 + 4.0 * np.sqrt(5.0) * d + (5.0 / 3.0) * d**2) * np.exp(
        -np.sqrt(5.0) * d
    )


@dataclass(frozen=True)
class WeaklyPeriodic:
    """Periodic-feature EQ kernel with a wide EQ envelope."""

    def __call__(self, x, x2):
        x = np.asarray(x, float)
        x2 = np.asarray(x2, float)
        f1 = np.subtract.outer(np.cos(8 * np.pi * x), np.cos(8 * np.pi * x2))
        f2 = np.subtract.outer(np.sin(8 * np.pi * x), np.sin(8 * np.pi * x2))
        d = np.subtract.outer(x, x2)
        return np.exp(-0.5 * f1**2 - 0.5 * f2**2) * np.exp(-0.125 * d**2)


KernelSpec = EQ | Matern52 | WeaklyPeriodic

DATA_KERNELS = {
    "eq": EQ(length_scale=0.25),
    "matern": Matern52(input_scale=4.0),
    "weakly-periodic": WeaklyPeriodic(),
}


def kernel_eval(spec, x, x2) -> float:
    """Pointwise kernel value k(x, x')."""
    return float(spec(np.atleast_1d(x), np.atleast_1d(x2))[0, 0])


def gram(spec, xs) -> np.ndarray:
    """Symmetric Gram matrix of pairwise kernel values."""
    xs = np.asarray(xs, float)
    g = spec(xs, xs)
    return 0.5 * (g + g.T)


def cholesky_with_jitter(matrix, jitter_scale=1e-6, max_retries=3):
    """Lower-triangular Cholesky of matrix + jitter*I, escalating jitter x10.

    Base jitter is jitter_scale * mean(diagonal).
    """
    matrix = np.asarray(matrix, float)
    jitter = jitter_scale * float(np.mean(np.diag(matrix))) if matrix.size else 0.0
    for attempt in range(max_retries + 1):
        try:
            return np.linalg.cholesky(matrix + jitter * np.eye(len(matrix)))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(
        f"Cholesky failed after {max_retries} jitter escalations (final {jitter:.1e})"
    )


def init_log_length_scale(gamma: float, dim: int = 1) -> float:
    """Initial log length scale: twice the grid spacing 1/gamma^(1/dim)."""
    return float(np.log(2.0 / gamma ** (1.0 / dim)))


def learnable_psi_eval(log_length_scale: ad.Node, distances) -> ad.Node:
    """Differentiable EQ weights exp(-0.5 (d / l)^2), l = exp(log_length_scale).

    Gradient flows to the log length scale; ``distances`` is held fixed.
    """
    d2 = ad.constant(np.asarray(distances, float) ** 2)
    inv_l2 = ad.exp(
        ad.mul(log_length_scale, ad.constant(np.asarray(-2.0)))
    )  # 1 / l^2
    return ad.exp(ad.mul(d2, ad.mul(inv_l2, ad.constant(np.asarray(-0.5)))))
