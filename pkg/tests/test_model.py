"""Tests for the model pipeline: patchify, encoder/decoder, aggregation."""

import numpy as np
import pytest

from prmim import model as mdl
from prmim import numerics as nm
from prmim import tokens
from prmim.numerics import ParameterError, Tensor
from prmim.tokens import GridShape


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


TOY = mdl.ModelConfig(kernel_size=3)


def _toy_setup(seed, rho_e=0.75, rho_d=0.5, config=TOY):
    rng = _rng(seed)
    image = rng.uniform(size=(config.in_channels,) + config.image_hw)
    plan = tokens.generate_mask(config.grid, rho_e, seed)
    if rho_d > 0:
        plan = tokens.throw_furthest(plan, rho_d, seed + 1)
    params = mdl.init_params(config, seed + 2)
    return params, image, plan


# ------------------------------------------------------------- patchify


def test_patchify_vit_shape():
    image = _rng(0).uniform(size=(3, 224, 224))
    assert mdl.patchify(image, 16).shape == (196, 768)


def test_patchify_single_channel_shape():
    image = _rng(1).uniform(size=(1, 32, 32))
    assert mdl.patchify(image, 16).shape == (4, 256)


def test_patchify_roundtrip():
    image = _rng(2).uniform(size=(3, 32, 32))
    patches = mdl.patchify(image, 4)
    back = mdl.unpatchify(patches, GridShape(8, 8), 4, 3)
    np.testing.assert_array_equal(back, image)


def test_patchify_indivisible():
    with pytest.raises(nm.ShapeError):
        mdl.patchify(np.zeros((3, 30, 32)), 4)


def test_patchify_row_major_order():
    # Patch index i must cover grid cell (i // cols, i % cols).
    image = np.zeros((1, 4, 6))
    image[0, 0:2, 2:4] = 7.0  # grid cell (0, 1) with patch size 2
    patches = mdl.patchify(image, 2)
    assert np.all(patches[1] == 7.0)
    assert np.all(patches[[0, 2, 3, 4, 5]] == 0.0)


# ---------------------------------------------------- normalize_targets


def test_normalize_constant_patch():
    out = mdl.normalize_targets(np.full((3, 8), 2.5))
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_normalize_two_point_patch():
    out = mdl.normalize_targets(np.array([[1.0, 3.0]]), eps=1e-12)
    np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-6)


def test_normalize_statistics():
    patches = _rng(3).uniform(size=(10, 48))
    out = mdl.normalize_targets(patches)
    assert np.max(np.abs(out.mean(axis=-1))) <= 1e-9
    assert np.max(np.abs(out.var(axis=-1) - 1.0)) <= 1e-4


# --------------------------------------------------------------- encode


def test_encode_shape():
    params, image, plan = _toy_setup(4)
    patches = mdl.patchify(image, TOY.patch_size)
    out = mdl.encode(params, patches, plan, TOY)
    assert out.shape == (plan.unmasked_indices.size, TOY.enc_dim)
    assert out.shape[0] == tokens.round_half_up(64 * 0.25)


def test_encode_requires_unmasked():
    config = TOY
    labels = np.full(64, tokens.MASKED_RETAINED, dtype=np.int64)
    plan = tokens.MaskPlan(grid=config.grid, labels=labels, rho_e=1.0, rho_d=0.0)
    params = mdl.init_params(config, 0)
    with pytest.raises(ParameterError):
        mdl.encode(params, np.zeros((64, config.pixel_dim)), plan, config)


def test_encode_permutation_equivariance():
    """Token identity travels with its positional encoding, not its row."""
    params, image, plan = _toy_setup(5)
    patches = mdl.patchify(image, TOY.patch_size)
    keep = plan.unmasked_indices
    base = mdl.encode(params, patches, plan, TOY).data

    perm = _rng(6).permutation(keep.size)
    x = Tensor(patches[keep[perm]])
    x = nm.add(nm.matmul(x, params["patch_embed_w"]), params["patch_embed_b"])
    x = nm.add(x, nm.take_rows(params["enc_pos"], keep[perm]))
    for i in range(TOY.enc_depth):
        x = mdl._block(x, params, f"enc.{i}", TOY.enc_heads)
    x = nm.layer_norm(x, params["enc_norm_g"], params["enc_norm_b"], mdl.LN_EPS)
    np.testing.assert_allclose(x.data, base[perm], atol=1e-10)


# --------------------------------------------------------------- decode


def test_decode_sequence_lengths():
    config = mdl.ModelConfig(grid=GridShape(14, 14), patch_size=4, kernel_size=3)
    params, image, plan = _toy_setup(7, rho_d=0.5, config=config)
    patches = mdl.patchify(image, config.patch_size)
    enc_out = mdl.encode(params, patches, plan, config)
    dec_out, positions = mdl.decode(params, enc_out, plan, config)
    assert dec_out.shape == (98, config.dec_dim)  # N*(1 - rho_d)
    full_out, full_pos = mdl.decode(params, enc_out, plan, config, full=True)
    assert full_out.shape == (196, config.dec_dim)
    np.testing.assert_array_equal(full_pos, np.arange(196))


def test_decode_boundary_rho_d_equals_rho_e():
    params, image, plan = _toy_setup(8, rho_d=0.75)
    patches = mdl.patchify(image, TOY.patch_size)
    enc_out = mdl.encode(params, patches, plan, TOY)
    dec_out, positions = mdl.decode(params, enc_out, plan, TOY)
    assert dec_out.shape[0] == plan.unmasked_indices.size
    np.testing.assert_array_equal(positions, plan.unmasked_indices)


# ---------------------------------------------------- spatial_aggregate


def test_aggregate_empty_thrown():
    params, image, plan = _toy_setup(9, rho_d=0.0)
    patches = mdl.patchify(image, TOY.patch_size)
    enc_out = mdl.encode(params, patches, plan, TOY)
    dec_out, positions = mdl.decode(params, enc_out, plan, TOY, full=True)
    out = mdl.spatial_aggregate(params, dec_out, positions, plan, TOY)
    assert out.shape == (0, TOY.dec_dim)


def test_aggregate_matches_dense_conv_oracle():
    params, image, plan = _toy_setup(10)
    patches = mdl.patchify(image, TOY.patch_size)
    enc_out = mdl.encode(params, patches, plan, TOY)
    dec_out, positions = mdl.decode(params, enc_out, plan, TOY)
    got = mdl.spatial_aggregate(params, dec_out, positions, plan, TOY).data

    # Dense oracle: explicit zero-filled (rows, cols, dim) grid + conv.
    dense = np.zeros((TOY.grid.n_tokens, TOY.dec_dim))
    dense[positions] = dec_out.data
    grid_feats = dense.reshape(TOY.grid.rows, TOY.grid.cols, TOY.dec_dim).transpose(2, 0, 1)
    conv = nm.depthwise_conv2d(
        Tensor(grid_feats), params["agg_kernel"], params["agg_bias"]
    ).data
    expected = conv.transpose(1, 2, 0).reshape(TOY.grid.n_tokens, TOY.dec_dim)
    np.testing.assert_allclose(got, expected[plan.thrown_indices], atol=1e-12)


def test_aggregate_one_tap_construction():
    """Kernel with one off-center tap reproduces w * neighbor + b exactly."""
    config = TOY
    params = mdl.init_params(config, 11)
    # Thrown token at grid cell (2, 2); its only populated neighbor is at
    # (2, 3), offset (0, +1).
    labels = np.full(64, tokens.UNMASKED, dtype=np.int64)
    thrown_idx = 2 * 8 + 2
    labels[thrown_idx] = tokens.MASKED_THROWN
    plan = tokens.MaskPlan(grid=config.grid, labels=labels, rho_e=1 / 64, rho_d=1 / 64)
    positions = np.setdiff1d(np.arange(64), [thrown_idx])
    feats = _rng(12).normal(size=(63, config.dec_dim))

    w, b = 1.7, -0.3
    kernel = np.zeros((config.dec_dim, 3, 3))
    kernel[:, 1, 2] = w  # tap at offset (0, +1)
    params["agg_kernel"].data = kernel
    params["agg_bias"].data = np.full(config.dec_dim, b)

    out = mdl.spatial_aggregate(params, Tensor(feats), positions, plan, config).data
    neighbor_row = np.where(positions == thrown_idx + 1)[0][0]
    np.testing.assert_allclose(out[0], w * feats[neighbor_row] + b, atol=1e-12)


def test_aggregate_locality():
    """A thrown token's output only depends on features inside its window."""
    params, image, plan = _toy_setup(13)
    patches = mdl.patchify(image, TOY.patch_size)
    enc_out = mdl.encode(params, patches, plan, TOY)
    dec_out, positions = mdl.decode(params, enc_out, plan, TOY)
    target = int(plan.thrown_indices[0])
    tr, tc = TOY.grid.coord(target)
    half = TOY.kernel_size // 2

    base = mdl.spatial_aggregate(params, dec_out, positions, plan, TOY).data[0]

    kept = dec_out.data.copy()
    for row, pos in enumerate(positions):
        r, c = TOY.grid.coord(int(pos))
        if abs(r - tr) > half or abs(c - tc) > half:
            kept[row] = 0.0
    out = mdl.spatial_aggregate(params, Tensor(kept), positions, plan, TOY).data[0]
    np.testing.assert_array_equal(out, base)


def test_aggregate_isolated_token_is_bias_only():
    """No populated neighbors in-window -> conv output is the bias alone."""
    config = TOY
    params = mdl.init_params(config, 14)
    labels = np.full(64, tokens.UNMASKED, dtype=np.int64)
    # 3x3 block of thrown tokens; the center (3,3) is isolated at k=3.
    block = [(r, c) for r in (2, 3, 4) for c in (2, 3, 4)]
    for r, c in block:
        labels[r * 8 + c] = tokens.MASKED_THROWN
    plan = tokens.MaskPlan(grid=config.grid, labels=labels, rho_e=9 / 64, rho_d=9 / 64)
    positions = np.setdiff1d(np.arange(64), [r * 8 + c for r, c in block])
    feats = _rng(15).normal(size=(positions.size, config.dec_dim))
    out = mdl.spatial_aggregate(params, Tensor(feats), positions, plan, config).data
    center_row = int(np.where(plan.thrown_indices == 3 * 8 + 3)[0][0])
    np.testing.assert_allclose(out[center_row], params["agg_bias"].data, atol=1e-15)


@pytest.mark.parametrize("aggregation", mdl.AGGREGATIONS)
def test_aggregate_variants_shape(aggregation):
    config = mdl.ModelConfig(kernel_size=3, aggregation=aggregation)
    params, image, plan = _toy_setup(16, config=config)
    out = mdl.forward(params, image, plan, mdl.MODE_PROGRESSIVE, config)
    assert out.predictions.shape == (plan.n_masked, config.pixel_dim)


# -------------------------------------------------------- predict_pixels


def test_predict_pixels_shape():
    params = mdl.init_params(TOY, 17)
    feats = Tensor(_rng(18).normal(size=(5, TOY.dec_dim)))
    assert mdl.predict_pixels(params, feats).shape == (5, TOY.pixel_dim)


def test_predict_pixels_zero_features():
    params = mdl.init_params(TOY, 19)
    params["head_b"].data = np.zeros(TOY.pixel_dim)
    out = mdl.predict_pixels(params, Tensor(np.zeros((4, TOY.dec_dim))))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


# -------------------------------------------------------------- forward


@pytest.mark.parametrize("seed", range(10))
def test_progressive_at_zero_throw_equals_full(seed):
    rng = _rng(1000 + seed)
    config = mdl.ModelConfig(
        grid=GridShape(int(rng.integers(4, 9)), int(rng.integers(4, 9))),
        patch_size=2,
        enc_dim=int(rng.choice([16, 32])),
        dec_dim=int(rng.choice([8, 16])),
        kernel_size=3,
    )
    image = rng.uniform(size=(3,) + config.image_hw)
    plan = tokens.generate_mask(config.grid, 0.75, seed)
    params = mdl.init_params(config, seed)
    full = mdl.forward(params, image, plan, mdl.MODE_FULL, config)
    prog = mdl.forward(params, image, plan, mdl.MODE_PROGRESSIVE, config)
    np.testing.assert_array_equal(np.sort(full.loss_positions),
                                  np.sort(prog.loss_positions))
    assert np.max(np.abs(full.predictions.data - prog.predictions.data)) <= 1e-12


def test_partial_covers_retained_only():
    params, image, plan = _toy_setup(20)
    out = mdl.forward(params, image, plan, mdl.MODE_PARTIAL, TOY)
    np.testing.assert_array_equal(out.loss_positions, plan.retained_indices)
    assert out.loss_positions.size == tokens.round_half_up(64 * 0.25)


def test_progressive_covers_all_masked():
    params, image, plan = _toy_setup(21)
    out = mdl.forward(params, image, plan, mdl.MODE_PROGRESSIVE, TOY)
    np.testing.assert_array_equal(np.sort(out.loss_positions), plan.masked_indices)


def test_forward_unknown_mode():
    params, image, plan = _toy_setup(22)
    with pytest.raises(ParameterError):
        mdl.forward(params, image, plan, "banana", TOY)


def test_aggregation_kernel_gradient_flow():
    params, image, plan = _toy_setup(23)
    patches = mdl.patchify(image, TOY.patch_size)
    targets = mdl.normalize_targets(patches)

    def grad_for(mode):
        mdl.zero_grads(params)
        out = mdl.forward(params, image, plan, mode, TOY)
        loss = nm.mse(out.predictions, Tensor(targets[out.loss_positions]))
        nm.backward(loss, leaves=list(params.values()))
        return params["agg_kernel"].grad.copy()

    assert np.all(grad_for(mdl.MODE_FULL) == 0.0)
    assert np.all(grad_for(mdl.MODE_PARTIAL) == 0.0)
    assert np.any(grad_for(mdl.MODE_PROGRESSIVE) != 0.0)


def test_head_shared_between_paths():
    """Retained and thrown predictions go through the same head tensors."""
    params, image, plan = _toy_setup(24)
    out = mdl.forward(params, image, plan, mdl.MODE_PROGRESSIVE, TOY)
    mdl.zero_grads(params)
    nm.backward(nm.mean(out.predictions), leaves=list(params.values()))
    # Both position subsets drive the same head weight through one graph:
    # its gradient reflects retained and thrown rows together.
    assert np.any(params["head_w"].grad != 0.0)
    n_thrown = plan.thrown_indices.size
    retained_only = mdl.forward(params, image, plan, mdl.MODE_PARTIAL, TOY)
    mdl.zero_grads(params)
    scale = retained_only.predictions.size / out.predictions.size
    nm.backward(nm.mul(nm.mean(retained_only.predictions), scale),
                leaves=list(params.values()))
    partial_grad = params["head_w"].grad.copy()
    assert n_thrown > 0
    # Progressive gradient differs from the retained-only contribution,
    # so the thrown path demonstrably flows through the same parameter.
    mdl.zero_grads(params)
    nm.backward(nm.mean(out.predictions), leaves=list(params.values()))
    assert np.any(np.abs(params["head_w"].grad - partial_grad) > 1e-12)


def test_config_validation():
    with pytest.raises(ParameterError):
        mdl.ModelConfig(kernel_size=4)
    with pytest.raises(ParameterError):
        mdl.ModelConfig(enc_dim=30, enc_heads=4)
    with pytest.raises(ParameterError):
        mdl.ModelConfig(aggregation="maxpool")


def test_sincos_table_properties():
    table = mdl.sincos_table_2d(GridShape(8, 8), 32)
    assert table.shape == (64, 32)
    # First half encodes the grid row, second half the column: tokens 0
    # and 1 share a row; tokens 0 and 8 share a column; 0 and 9 share neither.
    np.testing.assert_array_equal(table[0, :16], table[1, :16])
    np.testing.assert_array_equal(table[0, 16:], table[8, 16:])
    assert np.any(table[0, 16:] != table[1, 16:])
    assert np.any(table[0, :16] != table[8, :16])
