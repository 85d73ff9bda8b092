"""The masked-image-modeling network with partial/progressive reconstruction.

Pipeline: patchify -> encoder over unmasked tokens -> decoder over
unmasked + retained-masked tokens (with a learnable mask token) ->
optional zero-fill spatial aggregation that reconstructs thrown tokens
-> shared norm + linear pixel head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import ParameterError, Tensor
from .tokens import GridShape, MaskPlan

DEPTHWISE_CONV = "depthwise_conv"
TRANSFORMER_BLOCK = "transformer_block"
CONVNEXT_BLOCK = "convnext_block"
AVERAGE_POOL = "average_pool"
AGGREGATIONS = (DEPTHWISE_CONV, TRANSFORMER_BLOCK, CONVNEXT_BLOCK, AVERAGE_POOL)

MODE_FULL = "full"
MODE_PARTIAL = "partial"
MODE_PROGRESSIVE = "progressive"
MODES = (MODE_FULL, MODE_PARTIAL, MODE_PROGRESSIVE)

LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    grid: GridShape = GridShape(8, 8)
    patch_size: int = 4
    in_channels: int = 3
    enc_dim: int = 32
    enc_depth: int = 2
    enc_heads: int = 2
    dec_dim: int = 16
    dec_depth: int = 1
    dec_heads: int = 2
    mlp_ratio: float = 4.0
    kernel_size: int = 7
    aggregation: str = DEPTHWISE_CONV
    norm_pix: bool = True

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ParameterError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.enc_dim % self.enc_heads or self.dec_dim % self.dec_heads:
            raise ParameterError("head counts must divide their dims")
        if self.enc_dim % 4 or self.dec_dim % 4:
            raise ParameterError("dims must be divisible by 4 for 2-d sin-cos tables")
        if self.aggregation not in AGGREGATIONS:
            raise ParameterError(f"unknown aggregation {self.aggregation!r}")

    @property
    def pixel_dim(self):
        return self.patch_size * self.patch_size * self.in_channels

    @property
    def image_hw(self):
        return (self.grid.rows * self.patch_size, self.grid.cols * self.patch_size)


@dataclass
class PipelineOutput:
    predictions: Tensor
    loss_positions: np.ndarray
    decoder_features: Tensor


def _trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) resampled until every draw lies within 2 std."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while np.any(bad):
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


def sincos_table_2d(grid, dim):
    """Fixed 2-d sin-cos positional table of shape (N, dim)."""
    half = dim // 2
    omega = 1.0 / (10000.0 ** (np.arange(half // 2, dtype=np.float64) / (half // 2)))
    rows = np.repeat(np.arange(grid.rows, dtype=np.float64), grid.cols)
    cols = np.tile(np.arange(grid.cols, dtype=np.float64), grid.rows)
    out = np.empty((grid.n_tokens, dim), dtype=np.float64)
    for axis, coord in ((0, rows), (1, cols)):
        phase = coord[:, None] * omega[None, :]
        out[:, axis * half : axis * half + half // 2] = np.sin(phase)
        out[:, axis * half + half // 2 : (axis + 1) * half] = np.cos(phase)
    return out


def _init_block(rng, params, prefix, dim, mlp_ratio):
    hidden = int(dim * mlp_ratio)
    params[f"{prefix}.norm1_g"] = Tensor(np.ones(dim), requires_grad=True)
    params[f"{prefix}.norm1_b"] = Tensor(np.zeros(dim), requires_grad=True)
    params[f"{prefix}.qkv_w"] = Tensor(_trunc_normal(rng, (dim, 3 * dim)), requires_grad=True)
    params[f"{prefix}.qkv_b"] = Tensor(np.zeros(3 * dim), requires_grad=True)
    params[f"{prefix}.proj_w"] = Tensor(_trunc_normal(rng, (dim, dim)), requires_grad=True)
    params[f"{prefix}.proj_b"] = Tensor(np.zeros(dim), requires_grad=True)
    params[f"{prefix}.norm2_g"] = Tensor(np.ones(dim), requires_grad=True)
    params[f"{prefix}.norm2_b"] = Tensor(np.zeros(dim), requires_grad=True)
    params[f"{prefix}.mlp1_w"] = Tensor(_trunc_normal(rng, (dim, hidden)), requires_grad=True)
    params[f"{prefix}.mlp1_b"] = Tensor(np.zeros(hidden), requires_grad=True)
    params[f"{prefix}.mlp2_w"] = Tensor(_trunc_normal(rng, (hidden, dim)), requires_grad=True)
    params[f"{prefix}.mlp2_b"] = Tensor(np.zeros(dim), requires_grad=True)


def init_params(config, seed):
    """Build the named parameter map (plus the fixed positional tables)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    c = config
    params = {}
    params["patch_embed_w"] = Tensor(_trunc_normal(rng, (c.pixel_dim, c.enc_dim)), requires_grad=True)
    params["patch_embed_b"] = Tensor(np.zeros(c.enc_dim), requires_grad=True)
    for i in range(c.enc_depth):
        _init_block(rng, params, f"enc.{i}", c.enc_dim, c.mlp_ratio)
    params["enc_norm_g"] = Tensor(np.ones(c.enc_dim), requires_grad=True)
    params["enc_norm_b"] = Tensor(np.zeros(c.enc_dim), requires_grad=True)
    params["dec_embed_w"] = Tensor(_trunc_normal(rng, (c.enc_dim, c.dec_dim)), requires_grad=True)
    params["dec_embed_b"] = Tensor(np.zeros(c.dec_dim), requires_grad=True)
    params["mask_token"] = Tensor(_trunc_normal(rng, (1, c.dec_dim)), requires_grad=True)
    for i in range(c.dec_depth):
        _init_block(rng, params, f"dec.{i}", c.dec_dim, c.mlp_ratio)
    if c.aggregation == DEPTHWISE_CONV:
        params["agg_kernel"] = Tensor(
            _trunc_normal(rng, (c.dec_dim, c.kernel_size, c.kernel_size)), requires_grad=True
        )
        params["agg_bias"] = Tensor(np.zeros(c.dec_dim), requires_grad=True)
    elif c.aggregation == TRANSFORMER_BLOCK:
        _init_block(rng, params, "agg", c.dec_dim, c.mlp_ratio)
    elif c.aggregation == CONVNEXT_BLOCK:
        params["agg_kernel"] = Tensor(
            _trunc_normal(rng, (c.dec_dim, c.kernel_size, c.kernel_size)), requires_grad=True
        )
        params["agg_bias"] = Tensor(np.zeros(c.dec_dim), requires_grad=True)
        params["agg_norm_g"] = Tensor(np.ones(c.dec_dim), requires_grad=True)
        params["agg_norm_b"] = Tensor(np.zeros(c.dec_dim), requires_grad=True)
        hidden = int(c.dec_dim * c.mlp_ratio)
        params["agg_pw1_w"] = Tensor(_trunc_normal(rng, (c.dec_dim, hidden)), requires_grad=True)
        params["agg_pw1_b"] = Tensor(np.zeros(hidden), requires_grad=True)
        params["agg_pw2_w"] = Tensor(_trunc_normal(rng, (hidden, c.dec_dim)), requires_grad=True)
        params["agg_pw2_b"] = Tensor(np.zeros(c.dec_dim), requires_grad=True)
    params["head_norm_g"] = Tensor(np.ones(c.dec_dim), requires_grad=True)
    params["head_norm_b"] = Tensor(np.zeros(c.dec_dim), requires_grad=True)
    params["head_w"] = Tensor(_trunc_normal(rng, (c.dec_dim, c.pixel_dim)), requires_grad=True)
    params["head_b"] = Tensor(np.zeros(c.pixel_dim), requires_grad=True)
    params["enc_pos"] = Tensor(sincos_table_2d(c.grid, c.enc_dim))
    params["dec_pos"] = Tensor(sincos_table_2d(c.grid, c.dec_dim))
    return params


def trainable_names(params):
    return [name for name, t in params.items() if t.requires_grad]


def zero_grads(params):
    for t in params.values():
        if t.requires_grad:
            t.zero_grad()


def patchify(image, patch_size):
    """(C, H, W) image -> (N, p*p*C) patch rows in row-major grid order."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    c, h, w = data.shape
    if h % patch_size or w % patch_size:
        raise nm.ShapeError(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = data.reshape(c, gh, patch_size, gw, patch_size)
    x = x.transpose(1, 3, 2, 4, 0)  # (gh, gw, p, p, C)
    return x.reshape(gh * gw, patch_size * patch_size * c)


def unpatchify(patches, grid, patch_size, in_channels):
    """Inverse of :func:`patchify`."""
    data = patches.data if isinstance(patches, Tensor) else np.asarray(patches)
    x = data.reshape(grid.rows, grid.cols, patch_size, patch_size, in_channels)
    x = x.transpose(4, 0, 2, 1, 3)
    return x.reshape(in_channels, grid.rows * patch_size, grid.cols * patch_size)


def normalize_targets(patches, eps=1e-6):
    """Per-patch standardization with population variance (norm-pixel target)."""
    if eps <= 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    data = patches.data if isinstance(patches, Tensor) else np.asarray(patches, dtype=np.float64)
    mu = data.mean(axis=-1, keepdims=True)
    var = data.var(axis=-1, keepdims=True)
    return (data - mu) / np.sqrt(var + eps)


def _linear(x, params, prefix):
    return nm.add(nm.matmul(x, params[f"{prefix}_w"]), params[f"{prefix}_b"])


def _attention(x, params, prefix, heads):
    t, dim = x.shape
    hd = dim // heads
    qkv = _linear(x, params, f"{prefix}.qkv")
    qkv = nm.transpose(nm.reshape(qkv, (t, 3, heads, hd)), (1, 2, 0, 3))
    q = nm.slice_(qkv, 0)
    k = nm.slice_(qkv, 1)
    v = nm.slice_(qkv, 2)
    att = nm.matmul(q, nm.transpose(k, (0, 2, 1)))
    att = nm.softmax(nm.mul(att, 1.0 / np.sqrt(hd)))
    out = nm.matmul(att, v)
    out = nm.reshape(nm.transpose(out, (1, 0, 2)), (t, dim))
    return _linear(out, params, f"{prefix}.proj")


def _block(x, params, prefix, heads):
    h = nm.layer_norm(x, params[f"{prefix}.norm1_g"], params[f"{prefix}.norm1_b"], LN_EPS)
    x = nm.add(x, _attention(h, params, prefix, heads))
    h = nm.layer_norm(x, params[f"{prefix}.norm2_g"], params[f"{prefix}.norm2_b"], LN_EPS)
    h = _linear(h, params, f"{prefix}.mlp1")
    h = nm.gelu(h)
    h = _linear(h, params, f"{prefix}.mlp2")
    return nm.add(x, h)


def encode(params, patches, plan, config):
    """Run the encoder over the unmasked tokens only."""
    keep = plan.unmasked_indices
    if keep.size == 0:
        raise ParameterError("encoder needs at least one unmasked token")
    x = Tensor(np.asarray(patches, dtype=np.float64)[keep])
    x = _linear(x, params, "patch_embed")
    x = nm.add(x, nm.take_rows(params["enc_pos"], keep))
    for i in range(config.enc_depth):
        x = _block(x, params, f"enc.{i}", config.enc_heads)
    return nm.layer_norm(x, params["enc_norm_g"], params["enc_norm_b"], LN_EPS)


def _decoder_positions(plan, full):
    if full:
        mask_pos = plan.masked_indices
    else:
        mask_pos = plan.retained_indices
    positions = np.sort(np.concatenate([plan.unmasked_indices, mask_pos]))
    return positions, mask_pos


def decode(params, encoder_out, plan, config, full=False):
    """Decoder over unmasked + retained tokens (all masked when ``full``).

    Returns the feature sequence and its token positions (ascending).
    """
    unmasked = plan.unmasked_indices
    positions, mask_pos = _decoder_positions(plan, full)
    proj = _linear(encoder_out, params, "dec_embed")
    mask_rows = nm.broadcast_rows(params["mask_token"], mask_pos.size)
    stacked = nm.concat([proj, mask_rows], axis=0)
    # Row i of `stacked` holds token unmasked[i] (then mask tokens in
    # mask_pos order); reorder into ascending token-index order.
    source = np.concatenate([unmasked, mask_pos])
    order = np.empty(positions.size, dtype=np.intp)
    order[np.searchsorted(positions, source)] = np.arange(source.size)
    x = nm.take_rows(stacked, order)
    x = nm.add(x, nm.take_rows(params["dec_pos"], positions))
    for i in range(config.dec_depth):
        x = _block(x, params, f"dec.{i}", config.dec_heads)
    return x, positions


def _to_grid(features_n_d, grid, dim):
    x = nm.reshape(features_n_d, (grid.rows, grid.cols, dim))
    return nm.transpose(x, (2, 0, 1))


def _from_grid(grid_feats, grid, dim):
    x = nm.transpose(grid_feats, (1, 2, 0))
    return nm.reshape(x, (grid.n_tokens, dim))


def spatial_aggregate(params, decoder_out, positions, plan, config):
    """Zero-fill thrown positions, aggregate spatially, gather thrown rows."""
    thrown = plan.thrown_indices
    if thrown.size == 0:
        return Tensor(np.zeros((0, config.dec_dim)))
    n = plan.grid.n_tokens
    zero_row = Tensor(np.zeros((1, config.dec_dim)))
    stacked = nm.concat([decoder_out, zero_row], axis=0)
    idx = np.full(n, positions.size, dtype=np.intp)
    idx[positions] = np.arange(positions.size)
    dense = nm.take_rows(stacked, idx)
    grid_feats = _to_grid(dense, plan.grid, config.dec_dim)

    agg = config.aggregation
    if agg == DEPTHWISE_CONV:
        out = nm.depthwise_conv2d(grid_feats, params["agg_kernel"], params["agg_bias"])
        out = _from_grid(out, plan.grid, config.dec_dim)
    elif agg == AVERAGE_POOL:
        k = config.kernel_size
        mean_kernel = Tensor(np.full((config.dec_dim, k, k), 1.0 / (k * k)))
        out = nm.depthwise_conv2d(grid_feats, mean_kernel, Tensor(np.zeros(config.dec_dim)))
        out = _from_grid(out, plan.grid, config.dec_dim)
    elif agg == TRANSFORMER_BLOCK:
        out = _block(dense, params, "agg", config.dec_heads)
    elif agg == CONVNEXT_BLOCK:
        h = nm.depthwise_conv2d(grid_feats, params["agg_kernel"], params["agg_bias"])
        h = _from_grid(h, plan.grid, config.dec_dim)
        h = nm.layer_norm(h, params["agg_norm_g"], params["agg_norm_b"], LN_EPS)
        h = _linear(h, params, "agg_pw1")
        h = nm.gelu(h)
        h = _linear(h, params, "agg_pw2")
        out = nm.add(dense, h)
    else:  # pragma: no cover - config validation rejects this earlier
        raise ParameterError(f"unknown aggregation {agg!r}")
    return nm.take_rows(out, thrown)


def predict_pixels(params, features):
    """Shared norm + linear head mapping decoder-width features to pixels."""
    h = nm.layer_norm(features, params["head_norm_g"], params["head_norm_b"], LN_EPS)
    return _linear(h, params, "head")


def forward(params, image, plan, mode, config):
    """Run the full pipeline in one of the three reconstruction modes."""
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}")
    if plan.n_masked == 0:
        raise ParameterError("mask plan has no masked tokens")
    patches = patchify(image, config.patch_size)
    enc_out = encode(params, patches, plan, config)

    if mode == MODE_FULL:
        dec_out, positions = decode(params, enc_out, plan, config, full=True)
        loss_positions = plan.masked_indices
        ranks = np.searchsorted(positions, loss_positions)
        feats = nm.take_rows(dec_out, ranks)
    elif mode == MODE_PARTIAL:
        dec_out, positions = decode(params, enc_out, plan, config)
        loss_positions = plan.retained_indices
        ranks = np.searchsorted(positions, loss_positions)
        feats = nm.take_rows(dec_out, ranks)
    else:
        dec_out, positions = decode(params, enc_out, plan, config)
        retained = plan.retained_indices
        ranks = np.searchsorted(positions, retained)
        retained_feats = nm.take_rows(dec_out, ranks)
        thrown_feats = spatial_aggregate(params, dec_out, positions, plan, config)
        feats = nm.concat([retained_feats, thrown_feats], axis=0)
        loss_positions = np.concatenate([retained, plan.thrown_indices])

    predictions = predict_pixels(params, feats)
    return PipelineOutput(
        predictions=predictions,
        loss_positions=loss_positions,
        decoder_features=feats,
    )
