"""Predictive models: off-grid ConvCNP, on-grid ConvCNP, and a CNP baseline.

All models output factorized Gaussian predictive distributions and are
differentiable end-to-end through the autodiff engine, so one NLL
backward pass trains any of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .embedding import DENSITY_EPS, embed, make_grid, normalize_density
from .kernels import init_log_length_scale, learnable_psi_eval
from .synthdata import Task, make_rng

SIGMA_MIN = 0.1
SIGMA_FLOOR_WEIGHT = 0.1  # sigma_post = 0.1 * sigma_min + 0.9 * raw


@dataclass(frozen=True)
class CnnSpec:
    """A plain convolutional stack: ReLU between layers, none after the last.

    ``channels`` lists output channels per layer.  ``skips`` maps a 1-based
    layer index to the earlier layers whose activations are concatenated to
    form its input (the last entry is always the preceding layer).
    """

    channels: tuple
    kernel_size: int = 5
    skips: dict = field(default_factory=dict)
    separable: bool = False

    @classmethod
    def small(cls, dim_y: int = 1) -> "CnnSpec":
        return cls(channels=(16, 32, 16, 2 * dim_y))

    @classmethod
    def xl(cls, dim_y: int = 1, base: int = 8) -> "CnnSpec":
        up = tuple(base * 2**i for i in range(6))
        down = tuple(base * 2**i for i in range(4, -1, -1))
        return cls(
            channels=up + down + (2 * dim_y,),
            skips={8: (5, 7), 9: (4, 8), 10: (3, 9), 11: (2, 10), 12: (1, 11)},
        )

    @property
    def n_layers(self) -> int:
        return len(self.channels)

    def receptive_field_steps(self) -> int:
        """Half-width of the receptive field in grid steps."""
        return self.n_layers * (self.kernel_size - 1) // 2


def _he_init(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _init_cnn_params(store, prefix, spec: CnnSpec, in_channels: int, rng, ndim=1):
    """Register conv weights/biases for a CnnSpec; returns nothing."""
    k = spec.kernel_size
    kshape = (k,) if ndim == 1 else (k, k)
    ksize = k**ndim
    widths = {}  # layer index -> output channels, for skip bookkeeping
    c_in = in_channels
    for i, c_out in enumerate(spec.channels, start=1):
        if i in spec.skips:
            c_in = sum(widths[j] for j in spec.skips[i])
        if spec.separable and k > 1:
            store.add(
                f"{prefix}.l{i}.dw",
                _he_init(rng, (c_in, 1) + kshape, ksize),
            )
            store.add(
                f"{prefix}.l{i}.pw",
                _he_init(rng, (c_out, c_in) + (1,) * ndim, c_in),
            )
        else:
            store.add(
                f"{prefix}.l{i}.weight",
                _he_init(rng, (c_out, c_in) + kshape, c_in * ksize),
            )
        store.add(f"{prefix}.l{i}.bias", np.zeros(c_out))
        widths[i] = c_out
        c_in = c_out


def _apply_conv(x, weight, bias, padding):
    conv = ad.conv1d if weight.value.ndim == 3 else ad.conv2d
    return conv(x, weight, bias, padding=padding)


def _apply_separable(x, dw, pw, bias, padding):
    conv = ad.conv1d if dw.value.ndim == 3 else ad.conv2d
    c_in = x.value.shape[0]
    parts = [
        conv(ad.narrow(x, 0, c, 1), ad.narrow(dw, 0, c, 1), padding=padding)
        for c in range(c_in)
    ]
    depthwise = ad.concat(parts, axis=0)
    return conv(depthwise, pw, bias, padding=padding)


def cnn_forward(spec: CnnSpec, x: ad.Node, leaves, prefix: str, padding="zeros") -> ad.Node:
    """Run the conv stack; ``x`` is channels-first (C, T) or (C, H, W)."""
    acts = {}
    h = x
    n = spec.n_layers
    for i in range(1, n + 1):
        if i in spec.skips:
            h = ad.concat([acts[j] for j in spec.skips[i]], axis=0)
        bias = leaves[f"{prefix}.l{i}.bias"]
        if spec.separable and spec.kernel_size > 1:
            h = _apply_separable(
                h, leaves[f"{prefix}.l{i}.dw"], leaves[f"{prefix}.l{i}.pw"], bias, padding
            )
        else:
            h = _apply_conv(h, leaves[f"{prefix}.l{i}.weight"], bias, padding)
        if i < n:
            h = ad.relu(h)
        acts[i] = h
    return h


@dataclass
class PredictiveDistribution:
    """Per-target Gaussian mean and standard deviation, kept as graph nodes."""

    mu: ad.Node  # (dim_y, M)
    sigma: ad.Node  # (dim_y, M)

    @property
    def mean(self) -> np.ndarray:
        """(M, dim_y) array of predictive means."""
        return self.mu.value.T.copy()

    @property
    def std(self) -> np.ndarray:
        return self.sigma.value.T.copy()


def nll_loss(pred: PredictiveDistribution, target_y) -> ad.Node:
    """Negative mean Gaussian log density of the targets under ``pred``."""
    target_y = np.asarray(target_y, float)
    if target_y.ndim == 1:
        target_y = target_y[:, None]
    if target_y.size == 0:
        raise ad.DiffError("nll_loss: empty target set")
    lp = ad.gaussian_log_pdf(target_y.T, pred.mu, pred.sigma)
    return ad.mul(ad.reduce_mean(lp), ad.constant(np.asarray(-1.0)))


def log_likelihood_per_point(pred: PredictiveDistribution, target_y) -> float:
    """Mean Gaussian log density per target point (not a graph node)."""
    target_y = np.asarray(target_y, float)
    if target_y.ndim == 1:
        target_y = target_y[:, None]
    lp = ad.gaussian_log_pdf(
        target_y.T, ad.constant(pred.mu.value), ad.constant(pred.sigma.value)
    )
    return float(lp.value.mean())


class ConvCNP:
    """Off-grid translation-equivariant conditional neural process.

    Pipeline: anchored uniform grid over context and target inputs ->
    kernel-smoothed set embedding with density channel -> normalized
    division -> 1-D CNN -> EQ-basis readout of per-target mean and
    standard deviation (softplus keeps the deviation channel positive
    before the readout sum).
    """

    def __init__(
        self,
        dim_y: int = 1,
        gamma: float = 32.0,
        cnn: CnnSpec | None = None,
        margin: float | None = None,
        sigma_floor: bool = True,
        multiplicity: int = 1,
        init_seed: int = 0,
    ):
        self.dim_y = dim_y
        self.gamma = float(gamma)
        self.cnn = cnn or CnnSpec.small(dim_y)
        # Default margin: CNN receptive-field half-width in input units, so
        # boundary effects stay outside the data range.
        if margin is None:
            margin = self.cnn.receptive_field_steps() / self.gamma
        self.margin = float(margin)
        self.sigma_floor = sigma_floor
        self.multiplicity = multiplicity
        self.in_channels = 1 + multiplicity * dim_y

        self.params = ad.ParameterStore()
        self.params.add("encoder.log_length_scale", init_log_length_scale(self.gamma))
        self.params.add("readout.log_length_scale", init_log_length_scale(self.gamma))
        rng = make_rng(init_seed, 0xC0)
        _init_cnn_params(self.params, "cnn", self.cnn, self.in_channels, rng, ndim=1)

    def forward(self, task: Task, leaves=None) -> PredictiveDistribution:
        if leaves is None:
            leaves = self.params.leaves()
        grid = make_grid(task.context_x, task.target_x, self.gamma, self.margin)
        emb = embed(
            task.context_x,
            task.context_y,
            grid,
            leaves["encoder.log_length_scale"],
            self.multiplicity,
        )
        emb = normalize_density(emb, DENSITY_EPS)
        h = cnn_forward(self.cnn, emb.channels, leaves, "cnn")
        f_mu = ad.narrow(h, 0, 0, self.dim_y)
        f_sigma = ad.narrow(h, 0, self.dim_y, self.dim_y)

        distances = grid.points[:, None] - np.asarray(task.target_x, float)[None, :]
        basis = learnable_psi_eval(leaves["readout.log_length_scale"], distances)
        mu = ad.matmul(f_mu, basis)
        sigma = ad.matmul(ad.softplus(f_sigma), basis)
        if self.sigma_floor:
            sigma = ad.add(
                ad.constant(np.asarray(SIGMA_FLOOR_WEIGHT * SIGMA_MIN)),
                ad.mul(ad.constant(np.asarray(1.0 - SIGMA_FLOOR_WEIGHT)), sigma),
            )
        return PredictiveDistribution(mu=mu, sigma=sigma)


class CNPBaseline:
    """Vanilla conditional neural process with mean pooling.

    Encoder: 3-layer ReLU MLP (128 units) on each (x, y) pair, averaged
    over the context set.  Decoder: same architecture on (x*, pooled),
    emitting mean and pre-deviation channels.  The deviation is floored:
    sigma = 0.1 * 0.1 + 0.9 * softplus(pre).
    """

    HIDDEN = 128

    def __init__(self, dim_y: int = 1, init_seed: int = 0):
        self.dim_y = dim_y
        h = self.HIDDEN
        self.params = ad.ParameterStore()
        rng = make_rng(init_seed, 0xC1)
        dims_enc = [1 + dim_y, h, h, h]
        for i in range(3):
            self.params.add(
                f"enc.l{i + 1}.weight",
                _he_init(rng, (dims_enc[i + 1], dims_enc[i]), dims_enc[i]),
            )
            self.params.add(f"enc.l{i + 1}.bias", np.zeros((dims_enc[i + 1], 1)))
        dims_dec = [1 + h, h, h, 2 * dim_y]
        for i in range(3):
            self.params.add(
                f"dec.l{i + 1}.weight",
                _he_init(rng, (dims_dec[i + 1], dims_dec[i]), dims_dec[i]),
            )
            self.params.add(f"dec.l{i + 1}.bias", np.zeros((dims_dec[i + 1], 1)))

    def _mlp(self, prefix, x, leaves):
        h = x
        for i in range(1, 4):
            h = ad.add(
                ad.matmul(leaves[f"{prefix}.l{i}.weight"], h),
                leaves[f"{prefix}.l{i}.bias"],
            )
            if i < 3:
                h = ad.relu(h)
        return h

    def forward(self, task: Task, leaves=None) -> PredictiveDistribution:
        if leaves is None:
            leaves = self.params.leaves()
        ctx_x = np.atleast_1d(np.asarray(task.context_x, float))
        ctx_y = np.asarray(task.context_y, float)
        if ctx_y.ndim == 1:
            ctx_y = ctx_y[:, None]
        tgt_x = np.atleast_1d(np.asarray(task.target_x, float))
        n_targets = tgt_x.size

        if ctx_x.size:
            order = np.argsort(ctx_x, kind="stable")  # exact permutation invariance
            inputs = ad.constant(
                np.vstack([ctx_x[order][None, :], ctx_y[order].T])
            )
            rep = ad.reduce_mean(self._mlp("enc", inputs, leaves), axis=1, keepdims=True)
        else:
            rep = ad.constant(np.zeros((self.HIDDEN, 1)))
        tiled = ad.matmul(rep, ad.constant(np.ones((1, n_targets))))
        dec_in = ad.concat([ad.constant(tgt_x[None, :]), tiled], axis=0)
        out = self._mlp("dec", dec_in, leaves)
        mu = ad.narrow(out, 0, 0, self.dim_y)
        sigma_pre = ad.narrow(out, 0, self.dim_y, self.dim_y)
        sigma = ad.add(
            ad.constant(np.asarray(SIGMA_FLOOR_WEIGHT * SIGMA_MIN)),
            ad.mul(
                ad.constant(np.asarray(1.0 - SIGMA_FLOOR_WEIGHT)),
                ad.softplus(sigma_pre),
            ),
        )
        return PredictiveDistribution(mu=mu, sigma=sigma)


@dataclass
class GridPredictive:
    """Full-grid Gaussian prediction with the target mask attached."""

    mu: ad.Node  # (C, ...) same spatial shape as the input
    sigma: ad.Node
    target_mask: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.mu.value.copy()

    @property
    def std(self) -> np.ndarray:
        return self.sigma.value.copy()


def _check_mask(mask, name):
    mask = np.asarray(mask, float)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError(f"{name} must be binary")
    return mask


class ConvCNPOnGrid:
    """ConvCNP for data living on a fixed grid (1-D or 2-D).

    The smoothing step is a convolution with a positivity-constrained
    trainable filter (elementwise absolute value): the density channel is
    the filtered context mask, the signal channels are the filtered masked
    data divided by the density.  A CNN plus a 1x1-conv head produce mean
    and deviation channels.
    """

    def __init__(
        self,
        channels: int = 1,
        ndim: int = 2,
        cnn: CnnSpec | None = None,
        smoothing_kernel_size: int = 5,
        padding: str = "circular",
        separable: bool = True,
        eps: float = DENSITY_EPS,
        init_seed: int = 0,
    ):
        if ndim not in (1, 2):
            raise ValueError("ndim must be 1 or 2")
        self.channels = channels
        self.ndim = ndim
        self.padding = padding
        self.eps = eps
        base = cnn or CnnSpec(channels=(16, 32, 16))
        self.cnn = CnnSpec(
            channels=base.channels,
            kernel_size=base.kernel_size,
            skips=base.skips,
            separable=separable,
        )

        self.params = ad.ParameterStore()
        rng = make_rng(init_seed, 0xC2)
        kshape = (1, 1) + (smoothing_kernel_size,) * ndim
        self.params.add(
            "encoder.weight", np.abs(_he_init(rng, kshape, smoothing_kernel_size**ndim))
        )
        _init_cnn_params(
            self.params, "cnn", self.cnn, 1 + channels, rng, ndim=ndim
        )
        head_shape = (2 * channels, self.cnn.channels[-1]) + (1,) * ndim
        self.params.add(
            "head.weight", _he_init(rng, head_shape, self.cnn.channels[-1])
        )
        self.params.add("head.bias", np.zeros(2 * channels))

    def encode(self, image, context_mask, leaves=None) -> ad.Node:
        """Density channel plus density-normalized smoothed signal channels."""
        if leaves is None:
            leaves = self.params.leaves()
        image = np.asarray(image, float)
        if image.ndim != self.ndim + 1 or image.shape[0] != self.channels:
            raise ValueError(
                f"expected channels-first data with {self.channels} channels and "
                f"{self.ndim} spatial dims, got shape {image.shape}"
            )
        context_mask = _check_mask(context_mask, "context_mask")
        if context_mask.shape != image.shape[1:]:
            raise ValueError("context mask must match the spatial shape of the data")
        conv = ad.conv1d if self.ndim == 1 else ad.conv2d
        smoothing = ad.absolute(leaves["encoder.weight"])
        density = conv(
            ad.constant(context_mask[None]), smoothing, padding=self.padding
        )
        masked = context_mask[None] * image
        smoothed = ad.concat(
            [
                conv(ad.constant(masked[c : c + 1]), smoothing, padding=self.padding)
                for c in range(self.channels)
            ],
            axis=0,
        )
        signal = ad.div(smoothed, ad.add(density, ad.constant(np.asarray(self.eps))))
        return ad.concat([density, signal], axis=0)

    def forward(self, image, context_mask, target_mask, leaves=None) -> GridPredictive:
        if leaves is None:
            leaves = self.params.leaves()
        image = np.asarray(image, float)
        target_mask = _check_mask(target_mask, "target_mask")
        if target_mask.shape != image.shape[1:]:
            raise ValueError("target mask must match the spatial shape of the data")
        conv = ad.conv1d if self.ndim == 1 else ad.conv2d
        h = self.encode(image, context_mask, leaves)
        h = ad.relu(cnn_forward(self.cnn, h, leaves, "cnn", padding=self.padding))
        out = conv(h, leaves["head.weight"], leaves["head.bias"], padding=self.padding)
        mu = ad.narrow(out, 0, 0, self.channels)
        sigma = ad.softplus(ad.narrow(out, 0, self.channels, self.channels))
        return GridPredictive(mu=mu, sigma=sigma, target_mask=target_mask)


def grid_nll_loss(pred: GridPredictive, image) -> ad.Node:
    """Negative mean log density over target-mask positions."""
    image = np.asarray(image, float)
    mask = pred.target_mask[None]
    count = mask.sum() * image.shape[0]
    if count == 0:
        raise ad.DiffError("grid_nll_loss: empty target mask")
    lp = ad.gaussian_log_pdf(image, pred.mu, pred.sigma)
    masked = ad.mul(lp, ad.constant(np.broadcast_to(mask, image.shape).copy()))
    total = ad.reduce_sum(masked)
    return ad.mul(total, ad.constant(np.asarray(-1.0 / count)))
