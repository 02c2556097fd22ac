"""Feature disentanglement network: per-domain autoencoders with a texture /
structure split, a swap generator, and its discriminator.

Each image x is encoded into a texture vector ``z_tex`` (global appearance)
and a structure grid ``z_str`` (spatial layout at quarter resolution).
Swapping the texture of one domain onto the structure of the other, and
re-encoding the result, yields the training signals that force the split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    absolute,
    binary_cross_entropy,
    broadcast_hw,
    concat,
    cosine_similarity,
    maxpool2d,
    upsample2x,
)
from .errors import ConfigError
from .nn import Conv2d, Linear, Module


@dataclass
class LatentCode:
    """Split latent representation of an image batch."""

    z_tex: Tensor  # (n, d_tex)
    z_str: Tensor  # (n, c_str, h/4, w/4)


class Encoder(Module):
    """Three conv blocks with two 2x downsamplings, then separate texture
    (pooled linear) and structure (convolutional) heads."""

    def __init__(self, in_ch, h, w, d_tex, c_str, widths, rng):
        if h % 4 or w % 4:
            raise ConfigError(f"input extents must be divisible by 4, got {h}x{w}")
        w1, w2, w3 = widths
        self.conv1 = Conv2d(in_ch, w1, rng)
        self.conv2 = Conv2d(w1, w2, rng)
        self.conv3 = Conv2d(w2, w3, rng)
        self.str_head = Conv2d(w3, c_str, rng)
        self.tex_head = Linear(w3, d_tex, rng)
        self.in_shape = (in_ch, h, w)

    def __call__(self, x: Tensor) -> LatentCode:
        if x.data.ndim != 4 or x.data.shape[1:] != self.in_shape:
            raise ValueError(
                f"expected image batch of shape (n, {', '.join(map(str, self.in_shape))}), "
                f"got {x.data.shape}"
            )
        h1 = maxpool2d(self.conv1(x).relu())
        h2 = maxpool2d(self.conv2(h1).relu())
        h3 = self.conv3(h2).relu()
        z_str = self.str_head(h3)
        z_tex = self.tex_head(h3.mean(axis=(2, 3)))
        return LatentCode(z_tex=z_tex, z_str=z_str)


class Decoder(Module):
    """Mirror of the encoder: fuse texture and structure at quarter
    resolution, upsample twice, and emit a sigmoid image."""

    def __init__(self, in_ch, h, w, d_tex, c_str, widths, rng):
        w1, w2, w3 = widths
        self.tex_proj = Linear(d_tex, w3, rng)
        self.conv_a = Conv2d(c_str + w3, w3, rng)
        self.conv_b = Conv2d(w3, w2, rng)
        self.conv_c = Conv2d(w2, w1, rng)
        self.conv_out = Conv2d(w1, in_ch, rng)
        self.quarter = (h // 4, w // 4)

    def __call__(self, code: LatentCode) -> Tensor:
        hq, wq = self.quarter
        if code.z_str.data.shape[2:] != (hq, wq):
            raise ValueError(
                f"structure grid must be {hq}x{wq}, got {code.z_str.data.shape[2:]}"
            )
        tex = broadcast_hw(self.tex_proj(code.z_tex), hq, wq)
        fused = concat([code.z_str, tex], axis=1)
        d1 = upsample2x(self.conv_a(fused).relu())
        d2 = upsample2x(self.conv_b(d1).relu())
        d3 = self.conv_c(d2).relu()
        return self.conv_out(d3).sigmoid()


class SwapDiscriminator(Module):
    """Scores whether an image carries genuine target-domain appearance."""

    def __init__(self, in_ch, widths, rng):
        w1, w2, w3 = widths
        self.conv1 = Conv2d(in_ch, w1, rng)
        self.conv2 = Conv2d(w1, w2, rng)
        self.conv3 = Conv2d(w2, w3, rng)
        self.head = Linear(w3, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = maxpool2d(self.conv1(x).relu())
        h = maxpool2d(self.conv2(h).relu())
        h = maxpool2d(self.conv3(h).relu())
        scores = self.head(h.mean(axis=(2, 3)))
        return scores.sigmoid().reshape(-1)


class Fdn(Module):
    """The full disentanglement network: one encoder/decoder pair per domain
    plus the swap discriminator.  Both encoders share a common shape, so
    either can re-encode any generated image."""

    def __init__(
        self,
        in_ch: int,
        h: int,
        w: int,
        d_tex: int,
        c_str: int = 1,
        widths: tuple = (64, 32, 32),
        disc_widths: tuple = (32, 32, 64),
        rng: np.random.Generator | None = None,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        args = (in_ch, h, w, d_tex, c_str, widths)
        self.encoder_S = Encoder(*args, rng)
        self.encoder_T = Encoder(*args, rng)
        self.decoder_S = Decoder(*args, rng)
        self.decoder_T = Decoder(*args, rng)
        self.disc = SwapDiscriminator(in_ch, disc_widths, rng)
        # Start both domain pathways from the same weights.  The pairs stay
        # independent parameters from step one, but a shared origin means the
        # two latent spaces begin in correspondence instead of having to
        # discover it through the adversarial game alone.
        for src, dst in ((self.encoder_S, self.encoder_T),
                         (self.decoder_S, self.decoder_T)):
            for p_src, p_dst in zip(src.parameters(), dst.parameters()):
                p_dst.data[...] = p_src.data
        self.in_ch, self.h, self.w = in_ch, h, w
        self.d_tex, self.c_str = d_tex, c_str

    def encode(self, side: str, x: Tensor) -> LatentCode:
        return {"S": self.encoder_S, "T": self.encoder_T}[side](x)

    def decode(self, side: str, code: LatentCode) -> Tensor:
        return {"S": self.decoder_S, "T": self.decoder_T}[side](code)

    def swap_generate(self, z_str_src: Tensor, z_tex_tgt: Tensor) -> Tensor:
        """Compose source structure with target texture through the target
        decoder; with a sample's own codes this is exactly plain decoding."""
        return self.decoder_T(LatentCode(z_tex=z_tex_tgt, z_str=z_str_src))

    def generator_parameters(self) -> list[Tensor]:
        """Everything updated by the disentanglement objective (not the
        discriminator)."""
        params = []
        for m in (self.encoder_S, self.encoder_T, self.decoder_S, self.decoder_T):
            params.extend(m.parameters())
        return params


def loss_rec(fdn: Fdn, batch_S: Tensor, batch_T: Tensor, kind: str = "l1") -> Tensor:
    """Round-trip reconstruction error, source side plus target side."""
    if batch_S.data.shape[0] == 0 or batch_T.data.shape[0] == 0:
        raise ValueError("reconstruction loss needs non-empty batches")
    if kind not in ("l1", "l2"):
        raise ConfigError(f"rec_loss must be 'l1' or 'l2', got {kind!r}")
    total = None
    for side, batch in (("S", batch_S), ("T", batch_T)):
        recon = fdn.decode(side, fdn.encode(side, batch))
        diff = recon - batch
        term = (diff * diff).mean() if kind == "l2" else absolute(diff).mean()
        total = term if total is None else total + term
    return total


def disc_loss_swap(fdn: Fdn, real_T: Tensor, fake: Tensor) -> Tensor:
    """Discriminator objective: true target images score 1, swapped
    composites score 0.  Composites are detached, so no gradient reaches
    the generator from here."""
    if real_T.data.shape[0] == 0 or fake.data.shape[0] == 0:
        raise ValueError("discriminator loss needs non-empty batches")
    on_real = binary_cross_entropy(fdn.disc(real_T), 1.0).mean()
    on_fake = binary_cross_entropy(fdn.disc(fake.detach()), 0.0).mean()
    return on_real + on_fake


def gen_loss_swap(fdn: Fdn, fake: Tensor) -> Tensor:
    """Non-saturating generator objective: push the discriminator's score on
    swapped composites toward 1."""
    if fake.data.shape[0] == 0:
        raise ValueError("generator loss needs a non-empty batch")
    return binary_cross_entropy(fdn.disc(fake), 1.0).mean()


def loss_str(z_str_i: Tensor, z_str_ij: Tensor) -> Tensor:
    """Structure drift between an original structure grid and the one
    re-encoded from its swapped composite: 1 - cos of the flattened grids,
    in [0, 2].  Degenerate (near-zero-norm) grids score 1."""
    if z_str_i.data.shape != z_str_ij.data.shape:
        raise ValueError(
            f"structure grids differ in shape: {z_str_i.data.shape} vs {z_str_ij.data.shape}"
        )
    flat_i = z_str_i.reshape(-1)
    flat_ij = z_str_ij.reshape(-1)
    return 1.0 - cosine_similarity(flat_i, flat_ij)


def loss_disent(rec, swap, structure, lam1: float, lam2: float):
    """Weighted disentanglement objective: rec + lam1*swap + lam2*structure."""
    if lam1 < 0 or lam2 < 0:
        raise ConfigError(f"loss weights must be non-negative, got {lam1}, {lam2}")
    return rec + lam1 * swap + lam2 * structure
