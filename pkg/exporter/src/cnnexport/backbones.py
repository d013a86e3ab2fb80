"""Pretrained backbones truncated at a named spatial layer."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn
from torchvision import models

# ImageNet channel statistics used by all torchvision classifiers.
_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
_STD = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)


class BackboneError(Exception):
    pass


def _vgg16_conv5(pretrained: bool) -> nn.Module:
    weights = models.VGG16_Weights.IMAGENET1K_V1 if pretrained else None
    # features[:30] ends at the last ReLU of the conv5 block.
    return models.vgg16(weights=weights).features[:30]


def _resnet50_pool5(pretrained: bool) -> nn.Module:
    weights = models.ResNet50_Weights.IMAGENET1K_V2 if pretrained else None
    net = models.resnet50(weights=weights)
    return nn.Sequential(
        net.conv1, net.bn1, net.relu, net.maxpool,
        net.layer1, net.layer2, net.layer3, net.layer4,
    )


def _densenet121_block4(pretrained: bool) -> nn.Module:
    weights = models.DenseNet121_Weights.IMAGENET1K_V1 if pretrained else None
    return models.densenet121(weights=weights).features


def _alexnet_conv5(pretrained: bool) -> nn.Module:
    weights = models.AlexNet_Weights.IMAGENET1K_V1 if pretrained else None
    return models.alexnet(weights=weights).features


# (backbone, layer) -> (builder, channel count of the layer's map)
LAYERS = {
    ("vgg16", "conv5"): (_vgg16_conv5, 512),
    ("resnet50", "pool5"): (_resnet50_pool5, 2048),
    ("densenet121", "denseblock4"): (_densenet121_block4, 1024),
    ("alexnet", "conv5"): (_alexnet_conv5, 256),
}


def layer_channels(backbone: str, layer: str) -> int:
    try:
        return LAYERS[(backbone, layer)][1]
    except KeyError:
        raise BackboneError(f"unknown backbone layer {backbone}:{layer}") from None


def load_backbone(backbone: str, layer: str, pretrained: bool = True) -> nn.Module:
    try:
        builder, _ = LAYERS[(backbone, layer)]
    except KeyError:
        raise BackboneError(f"unknown backbone layer {backbone}:{layer}") from None
    try:
        module = builder(pretrained)
    except Exception as exc:
        raise BackboneError(f"could not load {backbone}:{layer}: {exc}") from exc
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def extract_fmap(module: nn.Module, arr: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) image -> float64 (C, H', W') activation map."""
    x = torch.from_numpy(np.array(arr, dtype=np.uint8)).permute(2, 0, 1).float() / 255.0
    x = (x - _MEAN) / _STD
    with torch.no_grad():
        fmap = module(x.unsqueeze(0))
    if fmap.ndim != 4 or fmap.shape[2] < 1 or fmap.shape[3] < 1:
        raise BackboneError(f"layer produced non-spatial output {tuple(fmap.shape)}")
    return fmap.squeeze(0).double().numpy()
