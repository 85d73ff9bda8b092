"""Analytic FLOPs and activation-memory estimates for the pipeline.

Counting convention: 1 multiply-accumulate = 1 FLOP (recorded in every
report). Embedding and head linears are included; activation functions
and norms are ignored (sub-0.5% effect). All figures are exact
deterministic functions of the configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import AVERAGE_POOL, CONVNEXT_BLOCK, DEPTHWISE_CONV, TRANSFORMER_BLOCK, ModelConfig
from .tokens import GridShape, round_half_up

CONVENTION = "1 MAC = 1 FLOP"
GIGA = 1e9


def vit_b_mae_config():
    """ViT-B/16 MAE geometry on 224x224 images (the production-scale config)."""
    return ModelConfig(
        grid=GridShape(14, 14),
        patch_size=16,
        in_channels=3,
        enc_dim=768,
        enc_depth=12,
        enc_heads=12,
        dec_dim=512,
        dec_depth=8,
        dec_heads=16,
        mlp_ratio=4.0,
        kernel_size=7,
    )


def flops_transformer_stack(tokens, dim, depth, mlp_ratio):
    """Transformer-stack MACs in G: QKV/proj/MLP linears + attention maps."""
    if tokens == 0:
        return 0.0
    if tokens < 0 or dim <= 0 or depth <= 0 or mlp_ratio <= 0:
        raise ValueError("stack arguments must be positive")
    per_token = (4.0 + 2.0 * mlp_ratio) * dim * dim + 2.0 * tokens * dim
    return depth * tokens * per_token / GIGA


def flops_encoder(config, n_tokens):
    embed = n_tokens * config.pixel_dim * config.enc_dim / GIGA
    return embed + flops_transformer_stack(
        n_tokens, config.enc_dim, config.enc_depth, config.mlp_ratio
    )


def flops_decoder(config, n_unmasked, n_tokens):
    """Decoder stage: width projection of the encoder output plus the stack."""
    embed = n_unmasked * config.enc_dim * config.dec_dim / GIGA
    return embed + flops_transformer_stack(
        n_tokens, config.dec_dim, config.dec_depth, config.mlp_ratio
    )


def flops_head(config, n_tokens):
    return n_tokens * config.dec_dim * config.pixel_dim / GIGA


def flops_aggregation(config):
    """Spatial-aggregation MACs in G, evaluated at every grid position."""
    n = config.grid.n_tokens
    d = config.dec_dim
    k = config.kernel_size
    if config.aggregation in (DEPTHWISE_CONV, AVERAGE_POOL):
        return k * k * d * n / GIGA
    if config.aggregation == TRANSFORMER_BLOCK:
        return flops_transformer_stack(n, d, 1, config.mlp_ratio)
    if config.aggregation == CONVNEXT_BLOCK:
        dw = k * k * d * n
        pw = 2 * n * d * int(d * config.mlp_ratio)
        return (dw + pw) / GIGA
    raise ValueError(f"unknown aggregation {config.aggregation!r}")


def _activation_proxy(config, rho_e, rho_d):
    """Token-width activation units plus attention-map terms, summed over layers."""
    n = config.grid.n_tokens
    n_enc = n - round_half_up(n * rho_e)
    n_dec = n - round_half_up(n * rho_d)
    width = 4.0 + 2.0 * config.mlp_ratio
    enc_block = width * n_enc * config.enc_dim + config.enc_heads * n_enc * n_enc
    dec_block = width * n_dec * config.dec_dim + config.dec_heads * n_dec * n_dec
    total = config.enc_depth * enc_block + config.dec_depth * dec_block
    total += n_enc * config.enc_dim  # patch embedding output
    total += n_dec * config.dec_dim  # decoder embedding output
    total += n * config.pixel_dim  # head output
    return total


@dataclass(frozen=True)
class CostReport:
    rho_e: float
    rho_d: float
    encoder_g: float
    decoder_g: float
    aggregation_g: float
    head_g: float
    total_g: float
    baseline_total_g: float
    flops_ratio: float
    memory_proxy: float
    baseline_memory_proxy: float
    memory_ratio: float
    convention: str = CONVENTION

    def as_dict(self):
        return {
            "rho_e": self.rho_e,
            "rho_d": self.rho_d,
            "encoder_gflops": self.encoder_g,
            "decoder_gflops": self.decoder_g,
            "aggregation_gflops": self.aggregation_g,
            "head_gflops": self.head_g,
            "total_gflops": self.total_g,
            "baseline_total_gflops": self.baseline_total_g,
            "flops_ratio": self.flops_ratio,
            "memory_proxy": self.memory_proxy,
            "baseline_memory_proxy": self.baseline_memory_proxy,
            "memory_ratio": self.memory_ratio,
            "convention": self.convention,
        }


def _stage_flops(config, rho_e, rho_d):
    n = config.grid.n_tokens
    n_unmasked = n - round_half_up(n * rho_e)
    n_dec = n - round_half_up(n * rho_d)
    enc = flops_encoder(config, n_unmasked)
    dec = flops_decoder(config, n_unmasked, n_dec)
    agg = flops_aggregation(config) if rho_d > 0 else 0.0
    head = flops_head(config, n)
    return enc, dec, agg, head


def cost_report(config, rho_e, rho_d):
    """Per-stage FLOPs and memory proxy, with ratios vs the rho_d=0 baseline."""
    if rho_d > rho_e:
        raise ValueError(f"rho_d={rho_d} exceeds rho_e={rho_e}")
    enc, dec, agg, head = _stage_flops(config, rho_e, rho_d)
    total = enc + dec + agg + head
    b_enc, b_dec, b_agg, b_head = _stage_flops(config, rho_e, 0.0)
    baseline = b_enc + b_dec + b_agg + b_head
    mem = _activation_proxy(config, rho_e, rho_d)
    b_mem = _activation_proxy(config, rho_e, 0.0)
    return CostReport(
        rho_e=rho_e,
        rho_d=rho_d,
        encoder_g=enc,
        decoder_g=dec,
        aggregation_g=agg,
        head_g=head,
        total_g=total,
        baseline_total_g=baseline,
        flops_ratio=total / baseline,
        memory_proxy=mem,
        baseline_memory_proxy=b_mem,
        memory_ratio=mem / b_mem,
    )


def memory_estimate(config, rho_e, rho_d):
    """Activation-memory proxy and its ratio against the rho_d=0 baseline."""
    mem = _activation_proxy(config, rho_e, rho_d)
    base = _activation_proxy(config, rho_e, 0.0)
    return mem, mem / base
