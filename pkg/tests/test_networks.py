import numpy as np
import pytest

from piesrgan.errors import FingerprintError, ShapeError, ValidationError
from piesrgan.networks import (DiscriminatorConfig, GeneratorConfig, build_discriminator,
                               build_generator, checkpoint_hash, discriminator_forward,
                               generator_forward, identity_generator, load_checkpoint,
                               save_checkpoint)

TINY_G = GeneratorConfig(feature_maps=8, num_rrdb=1, growth_channels=4, db_convs_per_block=3)
TINY_D = DiscriminatorConfig(base_filters=4, dense_width=16)


def count_generator_params(in_ch, fm, nrrdb, nconv, gc, k=3):
    # written independently of generator_layers: walk the block structure by hand
    k3 = k ** 3
    total = k3 * in_ch * fm + fm
    per_db = 0
    width = fm
    for j in range(nconv):
        out = fm if j == nconv - 1 else gc
        per_db += k3 * width * out + out
        width += gc
    total += nrrdb * 3 * per_db
    total += 3 * (k3 * fm * fm + fm)
    total += k3 * fm * in_ch + in_ch
    return total


def test_generator_parameter_count_matches_counting_oracle():
    assert build_generator().parameter_count() == count_generator_params(4, 32, 4, 5, 16)
    assert build_generator().parameter_count() == 2247684
    cfg = GeneratorConfig(feature_maps=12, num_rrdb=2, db_convs_per_block=4, growth_channels=6)
    assert build_generator(cfg).parameter_count() == count_generator_params(4, 12, 2, 4, 6)


def test_generator_build_deterministic_and_bn_free():
    a, b = build_generator(TINY_G, 3), build_generator(TINY_G, 3)
    assert checkpoint_hash(a) == checkpoint_hash(b)
    assert not any("bn" in k for k in a.params) and not a.buffers


@pytest.mark.parametrize("box", [8, 16, 32])
def test_generator_same_dimension(box):
    g = build_generator(GeneratorConfig(feature_maps=4, num_rrdb=1, growth_channels=2,
                                        db_convs_per_block=2))
    x = np.random.default_rng(box).standard_normal((2, box, box, box, 4))
    assert generator_forward(g, x).shape == x.shape


def test_generator_zero_params_give_zero_output():
    g = build_generator(TINY_G)
    g = g.with_params({k: np.zeros_like(v) for k, v in g.params.items()})
    x = np.random.default_rng(0).standard_normal((1, 8, 8, 8, 4))
    assert np.all(generator_forward(g, x).data == 0)


def test_generator_eval_repeatable_and_rejects_channels():
    g = build_generator(TINY_G, 1)
    x = np.random.default_rng(1).standard_normal((2, 8, 8, 8, 4))
    assert generator_forward(g, x).data.tobytes() == generator_forward(g, x).data.tobytes()
    with pytest.raises(ShapeError):
        generator_forward(g, x[..., :3])


def test_residual_scale_zero_skips_rrdbs():
    cfg = GeneratorConfig(**{**TINY_G.__dict__, "residual_scale": 0.0})
    g = build_generator(cfg, 2)
    x = np.random.default_rng(2).standard_normal((1, 8, 8, 8, 4))
    ref = generator_forward(g, x).data
    scrambled = {k: (np.random.default_rng(9).standard_normal(v.shape) if k.startswith("rrdb") else v)
                 for k, v in g.params.items()}
    assert np.array_equal(generator_forward(g.with_params(scrambled), x).data, ref)
    with pytest.raises(ValidationError):
        GeneratorConfig(residual_scale=1.5)


def test_identity_generator():
    g = identity_generator(TINY_G)
    x = np.random.default_rng(3).standard_normal((2, 8, 8, 8, 4))
    np.testing.assert_allclose(generator_forward(g, x).data, x, atol=1e-12)


def test_discriminator_structure():
    d = build_discriminator()
    cfg = d.config
    plan = cfg.block_plan()
    assert len(plan) == 8
    assert [s for _, s in plan] == [1, 1, 2, 1, 2, 1, 2, 1]
    assert [f for f, _ in plan] == [32, 32, 64, 64, 128, 128, 256, 256]
    bn_blocks = {k.split(".")[0] for k in d.params if ".bn." in k}
    assert bn_blocks == {f"block{j}" for j in range(1, 8)}
    assert d.params["dense1.weight"].shape == (2 ** 3 * 256, 1024)
    assert d.params["dense2.weight"].shape == (1024, 1)
    assert cfg.dropout_rate == 0.4 and cfg.final_extent() == 2
    with pytest.raises(ShapeError):
        DiscriminatorConfig(input_box=12)


def test_discriminator_forward_contract():
    d = build_discriminator(TINY_D, 0)
    x = np.random.default_rng(4).standard_normal((3, 16, 16, 16, 4))
    logits, _ = discriminator_forward(d, x, "eval")
    assert logits.shape == (3, 1)
    again, _ = discriminator_forward(d, x, "eval")
    assert logits.data.tobytes() == again.data.tobytes()
    a, _ = discriminator_forward(d, x, "train", np.random.default_rng(0))
    b, _ = discriminator_forward(d, x, "train", np.random.default_rng(1))
    assert not np.array_equal(a.data, b.data)
    zero = d.with_params({k: np.zeros_like(v) for k, v in d.params.items()})
    assert np.all(discriminator_forward(zero, x, "train", np.random.default_rng(0))[0].data == 0)
    with pytest.raises(ShapeError):
        discriminator_forward(d, x[:, :8, :8, :8], "eval")


def test_checkpoint_round_trip_and_fingerprint(tmp_path):
    g = build_generator(TINY_G, 5)
    g.meta["filter"] = {"kind": "gaussian_spectral", "width": 0.5, "coarsen_factor": 1}
    save_checkpoint(tmp_path / "g.ckpt", g)
    back = load_checkpoint(tmp_path / "g.ckpt", expect_fingerprint=g.fingerprint)
    assert checkpoint_hash(back) == checkpoint_hash(g)
    assert back.meta == g.meta
    for k in g.params:
        assert back.params[k].tobytes() == g.params[k].tobytes()
    other = build_generator(GeneratorConfig(feature_maps=6, num_rrdb=1, growth_channels=4,
                                            db_convs_per_block=3))
    with pytest.raises(FingerprintError):
        load_checkpoint(tmp_path / "g.ckpt", expect_fingerprint=other.fingerprint)
    d = build_discriminator(TINY_D, 1)
    save_checkpoint(tmp_path / "d.ckpt", d)
    assert checkpoint_hash(load_checkpoint(tmp_path / "d.ckpt")) == checkpoint_hash(d)
