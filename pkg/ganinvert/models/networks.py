"""
Network Construction
Builds generator / inverter / discriminator / classifier modules from
declarative NetworkSpecs, mirrors generator ladders into inverter ladders and
wraps modules in ModelHandles that carry provenance metadata.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import torch
import torch.nn as nn

from ganinvert.middleware.error_handler import PairingError, SpecError
from ganinvert.models.schemas import (
    Activation,
    LayerKind,
    LayerSpec,
    NetworkRole,
    NetworkSpec,
    canonical_hash,
)

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]

_ACTIVATIONS: Dict[Activation, Callable[[], nn.Module]] = {
    Activation.NONE: nn.Identity,
    Activation.RELU: nn.ReLU,
    Activation.LEAKY_RELU: lambda: nn.LeakyReLU(0.2),
    Activation.TANH: nn.Tanh,
    Activation.SIGMOID: nn.Sigmoid,
}

INIT_STD = 0.02


# ==================== SHAPE CHAINING ====================

def image_layout(image_shape: Shape) -> Shape:
    """Tensor layout (minus batch) for an (h, w, c) or (features,) image shape."""
    if len(image_shape) == 3:
        h, w, c = image_shape
        return (c, h, w)
    return tuple(image_shape)


def input_shape(spec: NetworkSpec) -> Shape:
    if spec.role == NetworkRole.GENERATOR:
        return (spec.latent_dim,)
    return image_layout(spec.image_shape)


def output_shape(spec: NetworkSpec) -> Shape:
    if spec.role == NetworkRole.GENERATOR:
        return image_layout(spec.image_shape)
    if spec.role == NetworkRole.INVERTER:
        return (spec.latent_dim,)
    if spec.role == NetworkRole.DISCRIMINATOR:
        return (1,)
    if spec.num_classes is None:
        raise SpecError("classifier spec needs num_classes")
    return (spec.num_classes,)


def _layer_output(layer: LayerSpec, shape: Shape, index: int) -> Shape:
    kind = layer.kind
    if kind == LayerKind.DENSE:
        if len(shape) != 1:
            raise SpecError(f"layer {index}: dense expects a flat input, got {shape}", layer_index=index)
        return (layer.out,)
    if kind in (LayerKind.CONV, LayerKind.CONV_TRANSPOSE):
        if len(shape) != 3:
            raise SpecError(f"layer {index}: {kind.value} expects (C, H, W), got {shape}", layer_index=index)
        _, h, w = shape
        if kind == LayerKind.CONV:
            size = lambda n: (n + 2 * layer.padding - layer.kernel) // layer.stride + 1
        else:
            if layer.output_padding >= layer.stride:
                raise SpecError(f"layer {index}: output_padding must be < stride", layer_index=index)
            size = lambda n: (n - 1) * layer.stride - 2 * layer.padding + layer.kernel + layer.output_padding
        out = (layer.out, size(h), size(w))
        if out[1] <= 0 or out[2] <= 0:
            raise SpecError(f"layer {index}: {kind.value} collapses {shape} to {out}", layer_index=index)
        return out
    if kind == LayerKind.RESHAPE:
        target = tuple(layer.shape)
        if _numel(target) != _numel(shape):
            raise SpecError(f"layer {index}: cannot reshape {shape} into {target}", layer_index=index)
        return target
    if len(shape) == 1:
        raise SpecError(f"layer {index}: flatten of an already flat input", layer_index=index)
    return (_numel(shape),)


def _numel(shape: Shape) -> int:
    n = 1
    for s in shape:
        n *= s
    return n


def infer_shapes(spec: NetworkSpec) -> List[Shape]:
    """
    Walk the ladder and return every intermediate shape.

    Args:
        spec: Network spec

    Returns:
        List[Shape]: shapes[0] is the input, shapes[i + 1] the output of layer i

    Raises:
        SpecError: With the offending layer index when the chain breaks
    """
    shapes = [input_shape(spec)]
    for index, layer in enumerate(spec.layers):
        shapes.append(_layer_output(layer, shapes[-1], index))

    expected = output_shape(spec)
    last = len(spec.layers) - 1
    if shapes[-1] != expected:
        raise SpecError(
            f"{spec.role.value} ladder ends in {shapes[-1]}, expected {expected}", layer_index=last
        )
    return shapes


def validate_spec(spec: NetworkSpec) -> List[Shape]:
    """Check shape chaining and the role-specific output invariants."""
    shapes = infer_shapes(spec)
    last = len(spec.layers) - 1
    final = spec.layers[-1]

    if spec.role == NetworkRole.GENERATOR and final.activation != Activation.TANH:
        raise SpecError("generator must end in tanh (outputs live in [-1, 1])", layer_index=last)
    if spec.role in (NetworkRole.INVERTER, NetworkRole.DISCRIMINATOR) and final.activation != Activation.NONE:
        raise SpecError(f"{spec.role.value} output must not be squashed", layer_index=last)
    if spec.role == NetworkRole.CLASSIFIER:
        if final.kind != LayerKind.DENSE or final.activation != Activation.NONE:
            raise SpecError("classifier must end in a linear dense layer (logits)", layer_index=last)
        if len(spec.layers) < 2:
            raise SpecError("classifier needs at least one feature layer before the head", layer_index=0)
    return shapes


# ==================== MIRRORING ====================

def mirror_spec(
    generator_spec: NetworkSpec,
    role: NetworkRole = NetworkRole.INVERTER,
    hidden_activation: Activation = Activation.LEAKY_RELU,
) -> NetworkSpec:
    """
    Derive an image → latent ladder by reversing a generator ladder.

    Transposed convolutions become convolutions with the same kernel, stride
    and padding; convolutions become transposed convolutions with the
    output padding needed to land on the original size; dense layers swap
    their in/out sizes; reshape and flatten swap roles. For a discriminator
    an extra dense(1) logit head is appended.

    Args:
        generator_spec: Spec with role generator
        role: INVERTER or DISCRIMINATOR
        hidden_activation: Activation for every non-final mirrored layer

    Returns:
        NetworkSpec: The mirrored spec
    """
    if generator_spec.role != NetworkRole.GENERATOR:
        raise SpecError("mirror_spec expects a generator spec")
    shapes = infer_shapes(generator_spec)
    layers: List[LayerSpec] = []

    for i in reversed(range(len(generator_spec.layers))):
        gen_layer = generator_spec.layers[i]
        s_in, s_out = shapes[i], shapes[i + 1]
        kind = gen_layer.kind
        shape_only = False

        if kind == LayerKind.CONV_TRANSPOSE:
            mirrored = LayerSpec(kind=LayerKind.CONV, out=s_in[0], kernel=gen_layer.kernel,
                                 stride=gen_layer.stride, padding=gen_layer.padding)
        elif kind == LayerKind.CONV:
            base = (s_out[1] - 1) * gen_layer.stride - 2 * gen_layer.padding + gen_layer.kernel
            out_pad = s_in[1] - base
            if not 0 <= out_pad < gen_layer.stride:
                raise SpecError(f"layer {i}: conv cannot be mirrored exactly", layer_index=i)
            mirrored = LayerSpec(kind=LayerKind.CONV_TRANSPOSE, out=s_in[0], kernel=gen_layer.kernel,
                                 stride=gen_layer.stride, padding=gen_layer.padding, output_padding=out_pad)
        elif kind == LayerKind.DENSE:
            mirrored = LayerSpec(kind=LayerKind.DENSE, out=s_in[0])
        elif len(s_in) == 1:
            mirrored = LayerSpec(kind=LayerKind.FLATTEN)
            shape_only = True
        else:
            mirrored = LayerSpec(kind=LayerKind.RESHAPE, shape=list(s_in))
            shape_only = True

        if not shape_only:
            mirrored.activation = hidden_activation
            mirrored.batch_norm = gen_layer.batch_norm and i > 0
        layers.append(mirrored)

    # final latent-producing layer stays linear
    for layer in reversed(layers):
        if layer.kind not in (LayerKind.RESHAPE, LayerKind.FLATTEN):
            layer.activation = Activation.NONE
            layer.batch_norm = False
            break

    if role == NetworkRole.DISCRIMINATOR:
        for layer in reversed(layers):
            if layer.kind not in (LayerKind.RESHAPE, LayerKind.FLATTEN):
                layer.activation = hidden_activation
                break
        layers.append(LayerSpec(kind=LayerKind.DENSE, out=1))

    spec = NetworkSpec(
        role=role,
        latent_dim=generator_spec.latent_dim,
        image_shape=generator_spec.image_shape,
        layers=layers,
    )
    validate_spec(spec)
    return spec


# ==================== DEFAULT ARCHITECTURES ====================

def default_generator_spec(latent_dim: int, image_shape: Shape, hidden: int = 128) -> NetworkSpec:
    """DCGAN-style ladder for 28×28 images, MLP for vector data."""
    if len(image_shape) == 1:
        layers = [
            LayerSpec(kind=LayerKind.DENSE, out=hidden, activation=Activation.RELU),
            LayerSpec(kind=LayerKind.DENSE, out=hidden, activation=Activation.RELU),
            LayerSpec(kind=LayerKind.DENSE, out=image_shape[0], activation=Activation.TANH),
        ]
    else:
        h, w, c = image_shape
        if h % 4 or w % 4:
            raise SpecError(f"default generator needs sides divisible by 4, got {image_shape}")
        layers = [
            LayerSpec(kind=LayerKind.DENSE, out=hidden * (h // 4) * (w // 4),
                      activation=Activation.RELU, batch_norm=True),
            LayerSpec(kind=LayerKind.RESHAPE, shape=[hidden, h // 4, w // 4]),
            LayerSpec(kind=LayerKind.CONV_TRANSPOSE, out=hidden // 2, activation=Activation.RELU,
                      batch_norm=True),
            LayerSpec(kind=LayerKind.CONV_TRANSPOSE, out=c, activation=Activation.TANH),
        ]
    return NetworkSpec(role=NetworkRole.GENERATOR, latent_dim=latent_dim,
                       image_shape=image_shape, layers=layers)


def default_classifier_spec(image_shape: Shape, num_classes: int, latent_dim: int = 1,
                            hidden: int = 128) -> NetworkSpec:
    """Small conv classifier (or MLP for vector data); Φ is everything but the head."""
    if len(image_shape) == 1:
        layers = [
            LayerSpec(kind=LayerKind.DENSE, out=hidden // 2, activation=Activation.RELU),
            LayerSpec(kind=LayerKind.DENSE, out=hidden // 2, activation=Activation.RELU),
        ]
    else:
        layers = [
            LayerSpec(kind=LayerKind.CONV, out=32, activation=Activation.LEAKY_RELU),
            LayerSpec(kind=LayerKind.CONV, out=64, activation=Activation.LEAKY_RELU),
            LayerSpec(kind=LayerKind.FLATTEN),
            LayerSpec(kind=LayerKind.DENSE, out=hidden, activation=Activation.RELU),
        ]
    layers.append(LayerSpec(kind=LayerKind.DENSE, out=num_classes))
    return NetworkSpec(role=NetworkRole.CLASSIFIER, latent_dim=latent_dim, image_shape=image_shape,
                       layers=layers, num_classes=num_classes)


# ==================== MODULES ====================

def _block(layer: LayerSpec, in_shape: Shape) -> nn.Module:
    parts: List[nn.Module] = []
    if layer.kind == LayerKind.DENSE:
        parts.append(nn.Linear(in_shape[0], layer.out))
        if layer.batch_norm:
            parts.append(nn.BatchNorm1d(layer.out))
    elif layer.kind == LayerKind.CONV:
        parts.append(nn.Conv2d(in_shape[0], layer.out, layer.kernel, layer.stride, layer.padding))
        if layer.batch_norm:
            parts.append(nn.BatchNorm2d(layer.out))
    elif layer.kind == LayerKind.CONV_TRANSPOSE:
        parts.append(nn.ConvTranspose2d(in_shape[0], layer.out, layer.kernel, layer.stride,
                                        layer.padding, output_padding=layer.output_padding))
        if layer.batch_norm:
            parts.append(nn.BatchNorm2d(layer.out))
    elif layer.kind == LayerKind.RESHAPE:
        parts.append(nn.Unflatten(1, tuple(layer.shape)))
    else:
        parts.append(nn.Flatten(1))
    parts.append(_ACTIVATIONS[layer.activation]())
    return nn.Sequential(*parts)


class LadderNet(nn.Module):
    """A ladder of blocks evaluated in order."""

    def __init__(self, spec: NetworkSpec, shapes: List[Shape]):
        super().__init__()
        self.blocks = nn.Sequential(*[_block(layer, shapes[i]) for i, layer in enumerate(spec.layers)])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x)


class Classifier(nn.Module):
    """f = C ∘ Φ: feature extractor followed by a linear head."""

    def __init__(self, features: nn.Module, head: nn.Module):
        super().__init__()
        self.features = features
        self.head = head

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.trunc_normal_(module.weight, mean=0.0, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, (nn.BatchNorm1d, nn.BatchNorm2d)):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


@dataclass
class ModelHandle:
    """A module plus the spec and provenance it was built or loaded with."""
    module: nn.Module
    role: NetworkRole
    spec: Optional[NetworkSpec] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def wrap(cls, module: nn.Module, role: NetworkRole, name: str,
             latent_dim: Optional[int] = None) -> "ModelHandle":
        """Wrap a hand-built module (no declarative spec)."""
        handle = cls(module=module, role=role)
        handle.metadata["spec_hash"] = canonical_hash({"role": role.value, "name": name})
        if latent_dim is not None:
            handle.metadata["latent_dim"] = latent_dim
        return handle

    @property
    def spec_hash(self) -> str:
        if self.spec is not None:
            return self.spec.spec_hash()
        return self.metadata["spec_hash"]

    @property
    def latent_dim(self) -> Optional[int]:
        if self.spec is not None:
            return self.spec.latent_dim
        return self.metadata.get("latent_dim")

    @property
    def dtype(self) -> torch.dtype:
        for p in self.module.parameters():
            return p.dtype
        return torch.get_default_dtype()

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return self.module(x)

    def freeze(self) -> "ModelHandle":
        """Switch to inference: eval mode, no parameter gradients."""
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        return self

    def named_arrays(self) -> Dict[str, torch.Tensor]:
        return {k: v.detach().cpu() for k, v in self.module.state_dict().items()}


def build_module(spec: NetworkSpec) -> nn.Module:
    shapes = validate_spec(spec)
    if spec.role == NetworkRole.CLASSIFIER:
        features_spec = spec.model_copy(update={"layers": spec.layers[:-1]})
        features = LadderNet(features_spec, shapes[:-1])
        head = nn.Linear(shapes[-2][0], spec.num_classes)
        return Classifier(features, head)
    return LadderNet(spec, shapes)


def build_model(spec: NetworkSpec, seed: int, dtype: torch.dtype = torch.float32) -> ModelHandle:
    """
    Build a module with deterministic initialization.

    Conv and dense weights are truncated-normal (std 0.02), biases zero. The
    global RNG state is left untouched.

    Args:
        spec: Validated network spec
        seed: Initialization seed
        dtype: Parameter dtype

    Returns:
        ModelHandle: Handle in train mode
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = build_module(spec)
        module.apply(_init_weights)
    module = module.to(dtype)
    logger.debug(f"Built {spec.role.value} with {sum(p.numel() for p in module.parameters())} parameters")
    return ModelHandle(module=module, role=spec.role, spec=spec, metadata={"seed": seed})


def pair_with(inverter: ModelHandle, generator: ModelHandle) -> ModelHandle:
    """Record that an inverter belongs to a generator."""
    inverter.metadata["paired_generator_hash"] = generator.spec_hash
    return inverter


def ensure_paired(generator: ModelHandle, inverter: ModelHandle) -> None:
    """Refuse an inverter that was not trained for this generator."""
    paired = inverter.metadata.get("paired_generator_hash")
    if paired != generator.spec_hash:
        raise PairingError(
            f"inverter paired with {str(paired)[:12]}, generator is {generator.spec_hash[:12]}"
        )


def check_input(handle: ModelHandle, x: torch.Tensor) -> None:
    """Raise SpecError when a batch does not match the handle's input layout."""
    if handle.spec is None:
        return
    expected = input_shape(handle.spec)
    if tuple(x.shape[1:]) != expected:
        raise SpecError(f"{handle.role.value} expects batches of {expected}, got {tuple(x.shape[1:])}")


def classifier_features(classifier: ModelHandle, x: torch.Tensor) -> torch.Tensor:
    """
    Φ(x): everything but the classifier's final layer.

    Args:
        classifier: Handle whose module is a Classifier
        x: Image batch in the model's input range

    Returns:
        torch.Tensor: Feature batch (n, feature_dim)
    """
    check_input(classifier, x)
    module = classifier.module
    if not isinstance(module, Classifier):
        raise SpecError("classifier_features needs a Classifier module (f = C ∘ Φ)")
    return module.features(x)


def classifier_logits(classifier: ModelHandle, x: torch.Tensor) -> torch.Tensor:
    check_input(classifier, x)
    return classifier.module(x)
