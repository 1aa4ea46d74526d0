"""
Network construction: shape chaining, mirroring, deterministic init and the
classifier's feature / head split.
"""

import pytest
import torch

from ganinvert.middleware.error_handler import PairingError, SpecError
from ganinvert.models.networks import (
    build_model,
    check_input,
    classifier_features,
    classifier_logits,
    default_classifier_spec,
    default_generator_spec,
    ensure_paired,
    infer_shapes,
    mirror_spec,
    output_shape,
    pair_with,
    validate_spec,
)
from ganinvert.models.schemas import Activation, LayerKind, LayerSpec, NetworkRole, NetworkSpec


def test_mirrored_inverter_maps_images_to_latents(image_generator_spec):
    spec = mirror_spec(image_generator_spec)
    assert spec.role == NetworkRole.INVERTER
    assert infer_shapes(spec)[0] == (1, 8, 8)
    assert output_shape(spec) == (4,)

    I = build_model(spec, seed=1, dtype=torch.float64)
    assert I(torch.zeros(3, 1, 8, 8, dtype=torch.float64)).shape == (3, 4)


def test_mirrored_discriminator_emits_one_logit(image_generator_spec):
    spec = mirror_spec(image_generator_spec, role=NetworkRole.DISCRIMINATOR)
    assert spec.layers[-1].kind == LayerKind.DENSE and spec.layers[-1].out == 1
    D = build_model(spec, seed=1, dtype=torch.float64)
    assert D(torch.zeros(2, 1, 8, 8, dtype=torch.float64)).shape == (2, 1)


def test_mirror_of_vector_generator(vector_generator_spec):
    spec = mirror_spec(vector_generator_spec)
    assert [layer.out for layer in spec.layers] == [16, 16, 2]
    assert spec.layers[-1].activation == Activation.NONE


def test_mirror_rejects_non_generator():
    spec = default_classifier_spec((2,), num_classes=3)
    with pytest.raises(SpecError):
        mirror_spec(spec)


def test_same_seed_same_weights(vector_generator_spec):
    a = build_model(vector_generator_spec, seed=7).named_arrays()
    b = build_model(vector_generator_spec, seed=7).named_arrays()
    c = build_model(vector_generator_spec, seed=8).named_arrays()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert any(not torch.equal(a[k], c[k]) for k in a)


def test_build_leaves_global_rng_untouched(vector_generator_spec):
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    build_model(vector_generator_spec, seed=0)
    assert torch.equal(torch.rand(3), expected)


def test_biases_start_at_zero(image_generator_spec):
    G = build_model(image_generator_spec, seed=0)
    for name, value in G.named_arrays().items():
        if name.endswith(".bias"):
            assert torch.count_nonzero(value) == 0, name


def test_generator_output_stays_in_tanh_range(image_generator_spec):
    G = build_model(image_generator_spec, seed=0, dtype=torch.float64).freeze()
    z = 50.0 * torch.randn(16, 4, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    x = G(z)
    assert x.shape == (16, 1, 8, 8)
    assert x.min() >= -1.0 and x.max() <= 1.0


def test_broken_chain_names_the_layer():
    spec = NetworkSpec(
        role=NetworkRole.GENERATOR,
        latent_dim=4,
        image_shape=(8, 8, 1),
        layers=[
            LayerSpec(kind=LayerKind.DENSE, out=16, activation=Activation.RELU),
            LayerSpec(kind=LayerKind.CONV_TRANSPOSE, out=1, activation=Activation.TANH),
        ],
    )
    with pytest.raises(SpecError) as exc:
        validate_spec(spec)
    assert exc.value.layer_index == 1


def test_generator_must_end_in_tanh():
    spec = NetworkSpec(
        role=NetworkRole.GENERATOR,
        latent_dim=2,
        image_shape=(2,),
        layers=[LayerSpec(kind=LayerKind.DENSE, out=2)],
    )
    with pytest.raises(SpecError) as exc:
        validate_spec(spec)
    assert exc.value.layer_index == 0


def test_default_generator_needs_sides_divisible_by_four():
    with pytest.raises(SpecError):
        default_generator_spec(4, (10, 10, 1))


def test_check_input_rejects_wrong_layout(image_generator_spec):
    I = build_model(mirror_spec(image_generator_spec), seed=0)
    with pytest.raises(SpecError):
        check_input(I, torch.zeros(2, 1, 7, 7))


def test_logits_are_head_of_features():
    spec = default_classifier_spec((8, 8, 1), num_classes=10)
    f = build_model(spec, seed=3, dtype=torch.float64).freeze()
    x = torch.rand(5, 1, 8, 8, generator=torch.Generator().manual_seed(1), dtype=torch.float64) * 2 - 1
    features = classifier_features(f, x)
    assert torch.allclose(classifier_logits(f, x), f.module.head(features))


def test_features_by_hand():
    spec = NetworkSpec(
        role=NetworkRole.CLASSIFIER,
        latent_dim=1,
        image_shape=(2,),
        num_classes=2,
        layers=[
            LayerSpec(kind=LayerKind.DENSE, out=2, activation=Activation.RELU),
            LayerSpec(kind=LayerKind.DENSE, out=2),
        ],
    )
    f = build_model(spec, seed=0, dtype=torch.float64)
    dense = f.module.features.blocks[0][0]
    with torch.no_grad():
        dense.weight.copy_(torch.tensor([[1.0, 2.0], [-1.0, 0.5]], dtype=torch.float64))
        dense.bias.copy_(torch.tensor([0.5, 0.0], dtype=torch.float64))
        f.module.head.weight.copy_(torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64))
        f.module.head.bias.zero_()

    x = torch.tensor([[1.0, 1.0], [2.0, -1.0]], dtype=torch.float64)
    # relu(W x + b) = [3.5, 0] and [0.5, 0]
    expected = torch.tensor([[3.5, 0.0], [0.5, 0.0]], dtype=torch.float64)
    assert torch.allclose(classifier_features(f, x), expected)
    assert torch.allclose(classifier_logits(f, x), expected)


def test_pairing_follows_generator_hash(vector_generator_spec):
    G = build_model(vector_generator_spec, seed=0)
    other = build_model(default_generator_spec(3, (2,), hidden=16), seed=0)
    I = pair_with(build_model(mirror_spec(vector_generator_spec), seed=0), G)
    ensure_paired(G, I)
    with pytest.raises(PairingError):
        ensure_paired(other, I)
