from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from phenogan.config import load_preset
from phenogan.model.gan import ModelMetadata, build_gan
from phenogan.model.networks import (ConfigError, DiscriminatorConfig, GeneratorConfig, build_discriminator,
                                     build_generator, downsample_mask)

TOY_G = GeneratorConfig(seed_grid=(8, 8), output_size=(64, 64), base_channels=64)
TOY_D = DiscriminatorConfig(input_size=(64, 64), base_channels=16, attention_stage=2)


def toy_mask(size=(64, 64)):
    m = np.zeros(size, np.uint8)
    m[size[0] // 4: size[0] // 2, size[1] // 4: 3 * size[1] // 4] = 1
    return m


def test_generator_output_range_and_shape():
    G = build_generator(TOY_G).eval()
    x = G(torch.randn(3, TOY_G.noise_dim), torch.tensor([30.0, 35.0, 40.0]), toy_mask())
    assert x.shape == (3, 3, 64, 64)
    assert x.abs().max() <= 1


def test_full_resolution_output_shape():
    cfg = load_preset("harvard").generator
    G = build_generator(cfg).to("meta").eval()
    out = G(torch.zeros(1, cfg.noise_dim, device="meta"), torch.full((1,), 32.95, device="meta"),
            torch.zeros(480, 648, device="meta"))
    assert out.shape == (1, 3, 480, 648)


@st.composite
def generator_configs(draw):
    stages = draw(st.integers(1, 3))
    h0, w0 = draw(st.integers(1, 6)), draw(st.integers(1, 6))
    base = 8 * 2 ** stages * draw(st.integers(1, 2))
    use_mask = draw(st.booleans())
    att = draw(st.integers(0, stages - 1))
    cfg = dict(noise_dim=draw(st.integers(1, 16)), seed_grid=(h0, w0), upsample_stages=stages,
               base_channels=base, output_size=(h0 * 2 ** stages, w0 * 2 ** stages), use_mask=use_mask,
               attention_stage=att)
    try:
        return GeneratorConfig(**cfg)
    except ConfigError:
        return GeneratorConfig(**{**cfg, "use_attention": False})


@given(generator_configs())
@settings(max_examples=50, deadline=None)
def test_random_configs_give_configured_size(cfg):
    G = build_generator(cfg).eval()
    mask = np.ones(cfg.output_size, np.uint8)
    out = G(torch.randn(2, cfg.noise_dim), torch.tensor([30.0, 40.0]), mask if cfg.use_mask else None)
    assert tuple(out.shape) == (2, 3, *cfg.output_size)


def test_config_validation():
    with pytest.raises(ConfigError):
        GeneratorConfig(seed_grid=(8, 8), output_size=(60, 64))
    with pytest.raises(ConfigError):
        GeneratorConfig(seed_grid=(8, 8), output_size=(64, 64), attention_stage=3)
    with pytest.raises(ConfigError):
        DiscriminatorConfig(input_size=(60, 64))
    with pytest.raises(ValueError):
        build_gan(TOY_G, DiscriminatorConfig(input_size=(32, 32), attention_stage=0))


def test_generator_deterministic_bytes():
    a = build_gan(TOY_G, TOY_D, seed=7).synthesize([31.5, 40.0], toy_mask(), seed=3)
    b = build_gan(TOY_G, TOY_D, seed=7).synthesize([31.5, 40.0], toy_mask(), seed=3)
    assert a.dtype == np.uint8 and a.shape == (2, 64, 64, 3)
    assert a.tobytes() == b.tobytes()
    c = build_gan(TOY_G, TOY_D, seed=8).synthesize([31.5, 40.0], toy_mask(), seed=3)
    assert a.tobytes() != c.tobytes()


def test_discriminator_score_shape_and_gcc_sensitivity():
    D = build_discriminator(TOY_D).eval()
    img = torch.rand(2, 3, 64, 64) * 2 - 1
    s1 = D(img, torch.tensor([30.0, 30.0]), toy_mask())
    s2 = D(img, torch.tensor([45.0, 45.0]), toy_mask())
    assert s1.shape == (2,)
    assert not torch.allclose(s1, s2)


def test_discriminator_has_no_linear_layers():
    D = build_discriminator(TOY_D)
    assert not any(isinstance(m, torch.nn.Linear) for m in D.modules())


def test_mask_required_and_size_checked():
    G = build_generator(TOY_G)
    with pytest.raises(ValueError):
        G(torch.randn(2, TOY_G.noise_dim), torch.tensor([30.0, 31.0]))
    with pytest.raises(ValueError):
        G(torch.randn(2, TOY_G.noise_dim), torch.tensor([30.0, 31.0]), np.ones((32, 32)))
    D = build_discriminator(TOY_D)
    with pytest.raises(ValueError):
        D(torch.zeros(2, 4, 64, 64), 30.0, toy_mask())


def test_gcc_counts_must_match_batch():
    G = build_generator(TOY_G)
    with pytest.raises(ValueError):
        G(torch.randn(3, TOY_G.noise_dim), torch.tensor([30.0, 31.0]), toy_mask())


def test_downsample_mask_binarizes():
    m = torch.zeros(1, 1, 4, 4)
    m[..., :2, :] = 1
    m[..., 2, 0] = 1
    out = downsample_mask(m, (2, 2))
    assert out.flatten().tolist() == [1, 1, 0, 0]


def test_metadata_roundtrip():
    md = ModelMetadata("s", "DB_1000", (0.3, 0.4), 5)
    assert ModelMetadata.from_dict(md.to_dict()) == md


def test_copy_is_independent():
    m = build_gan(TOY_G, TOY_D)
    c = m.copy()
    with torch.no_grad():
        next(c.generator.parameters()).add_(1.0)
    assert not torch.equal(next(m.generator.parameters()), next(c.generator.parameters()))
