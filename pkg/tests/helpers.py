"""
Hand-built double-precision models for exact-arithmetic tests.
"""

import torch
import torch.nn as nn

from ganinvert.models.networks import Classifier, ModelHandle, pair_with
from ganinvert.models.schemas import NetworkRole


def linear(weight, bias=None) -> nn.Linear:
    """nn.Linear (float64) with fixed weights; weight is (out, in)."""
    weight = torch.as_tensor(weight, dtype=torch.float64)
    layer = nn.Linear(weight.shape[1], weight.shape[0], bias=bias is not None).double()
    with torch.no_grad():
        layer.weight.copy_(weight)
        if bias is not None:
            layer.bias.copy_(torch.as_tensor(bias, dtype=torch.float64))
    return layer


def wrap_linear(weight, role: NetworkRole, name: str, bias=None) -> ModelHandle:
    layer = linear(weight, bias)
    latent_dim = layer.in_features if role == NetworkRole.GENERATOR else layer.out_features
    return ModelHandle.wrap(layer, role, name, latent_dim=latent_dim).freeze()


def linear_classifier(weight, bias=None, name: str = "linear_classifier") -> ModelHandle:
    """f(x) = W x + b with an identity feature map Φ."""
    module = Classifier(nn.Identity(), linear(weight, bias))
    return ModelHandle.wrap(module, NetworkRole.CLASSIFIER, name).freeze()


def identity_pair(dim: int):
    """G = I = identity on ℝ^dim, paired."""
    eye = torch.eye(dim, dtype=torch.float64)
    G = wrap_linear(eye, NetworkRole.GENERATOR, f"identity_generator_{dim}")
    I = wrap_linear(eye, NetworkRole.INVERTER, f"identity_inverter_{dim}")
    return G, pair_with(I, G)
