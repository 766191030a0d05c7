"""Set-to-function embedding on a uniform grid.

A context set is smoothed onto an anchored uniform grid through a
learnable EQ kernel, with a density channel (the constant component of
the power-series feature map) recording how much observation mass lands
near each grid point.  Dividing the signal channels by the density
channel (normalized convolution) decouples signal scale from sampling
density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .kernels import learnable_psi_eval

DENSITY_EPS = 1e-8


@dataclass(frozen=True)
class UniformGrid:
    """Evenly spaced points with spacing exactly 1/density.

    The lower edge is snapped down to a multiple of the spacing in a fixed
    global frame, so translating all inputs by a multiple of the spacing
    translates every grid point by exactly that amount.
    """

    lower: float
    spacing: float
    n_points: int

    @property
    def points(self) -> np.ndarray:
        return self.lower + np.arange(self.n_points) * self.spacing

    @property
    def upper(self) -> float:
        return self.lower + (self.n_points - 1) * self.spacing


def make_grid(context_xs, target_xs, gamma: float, margin: float = 0.0) -> UniformGrid:
    """Anchored uniform grid of density ``gamma`` covering all inputs plus margin."""
    xs = np.concatenate([np.atleast_1d(context_xs), np.atleast_1d(target_xs)])
    if xs.size == 0:
        raise ValueError("make_grid: no input points")
    if gamma <= 0:
        raise ValueError(f"make_grid: density must be positive, got {gamma}")
    lo = float(xs.min()) - margin
    hi = float(xs.max()) + margin
    lower = np.floor(lo * gamma) / gamma
    n_points = int(np.ceil((hi - lower) * gamma)) + 1
    return UniformGrid(lower=float(lower), spacing=1.0 / gamma, n_points=max(n_points, 2))


def phi_power_series(y, multiplicity: int = 1) -> np.ndarray:
    """Feature map (1, y, y^2, ..., y^K) applied per output channel.

    For a vector observation the layout is (1, y_1..y_d, y_1^2..y_d^2, ...),
    so the length is 1 + K * dim_y.  Multiplicity one reduces to appending
    a constant: (1, y).
    """
    if multiplicity < 1:
        raise ValueError("multiplicity must be >= 1")
    y = np.atleast_1d(np.asarray(y, float))
    powers = [np.ones(1)]
    for k in range(1, multiplicity + 1):
        powers.append(y**k)
    return np.concatenate(powers)


@dataclass
class FunctionalEmbedding:
    """Multi-channel function values on a grid; channel 0 is the density."""

    grid: UniformGrid
    channels: ad.Node  # shape (1 + K * dim_y, T)

    @property
    def density(self) -> np.ndarray:
        return self.channels.value[0]


def embed(
    context_x,
    context_y,
    grid: UniformGrid,
    log_length_scale: ad.Node,
    multiplicity: int = 1,
) -> FunctionalEmbedding:
    """Smooth the power-series features of a context set onto the grid.

    channels[:, i] = sum_n phi(y_n) * psi(t_i - x_n), differentiable in the
    smoothing kernel's log length scale.  Context points are accumulated in
    sorted-by-x order so the result is bit-identical under permutations of
    the context set.
    """
    context_x = np.atleast_1d(np.asarray(context_x, float))
    context_y = np.asarray(context_y, float)
    if context_y.ndim == 1:
        context_y = context_y[:, None]
    dim_y = context_y.shape[1] if context_y.size else 1
    n_channels = 1 + multiplicity * dim_y
    if context_x.size == 0:
        zeros = ad.constant(np.zeros((n_channels, grid.n_points)))
        return FunctionalEmbedding(grid=grid, channels=zeros)

    order = np.argsort(context_x, kind="stable")
    context_x = context_x[order]
    context_y = context_y[order]

    distances = context_x[:, None] - grid.points[None, :]  # (N, T)
    psi = learnable_psi_eval(log_length_scale, distances)
    phi = np.stack(
        [phi_power_series(y, multiplicity) for y in context_y], axis=1
    )  # (C, N)
    channels = ad.matmul(ad.constant(phi), psi)
    return FunctionalEmbedding(grid=grid, channels=channels)


def normalize_density(
    emb: FunctionalEmbedding, eps: float = DENSITY_EPS
) -> FunctionalEmbedding:
    """Divide signal channels by (density + eps); density itself is kept."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    n_channels = emb.channels.value.shape[0]
    density = ad.narrow(emb.channels, 0, 0, 1)
    signal = ad.narrow(emb.channels, 0, 1, n_channels - 1)
    normalized = ad.div(signal, ad.add(density, ad.constant(np.asarray(eps))))
    return FunctionalEmbedding(
        grid=emb.grid, channels=ad.concat([density, normalized], axis=0)
    )
