"""Frozen convolutional trunks and the image preprocessing they expect."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from torch import nn
from torchvision import models

from .manifest import ResizePolicy

GRID = 7

# channel depth of the last convolutional stage
MODEL_DEPTHS = {
    "resnet18": 512,
    "resnet34": 512,
    "resnet50": 2048,
}

_BUILDERS = {
    "resnet18": models.resnet18,
    "resnet34": models.resnet34,
    "resnet50": models.resnet50,
}

_PRETRAINED = {
    "resnet18": models.ResNet18_Weights.IMAGENET1K_V1,
    "resnet34": models.ResNet34_Weights.IMAGENET1K_V1,
    "resnet50": models.ResNet50_Weights.IMAGENET1K_V2,
}

# statistics the published weights were trained with
CHANNEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
CHANNEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def build_encoder(model: str, weights: str = "pretrained", seed: int = 0) -> nn.Module:
    """Return the convolutional trunk of ``model``, frozen and in eval mode.

    ``weights`` selects where parameters come from: ``"pretrained"`` fetches
    the published weights (needs the download cache or network access),
    ``"random"`` draws a fresh init from ``seed`` for offline use, and any
    other value is treated as a path to a state dict saved from the full
    classifier.
    """
    if model not in _BUILDERS:
        raise ValueError(f"unknown model {model!r}, expected one of {sorted(_BUILDERS)}")
    if weights == "pretrained":
        try:
            state = _PRETRAINED[model].get_state_dict(progress=False)
        except Exception as exc:
            raise RuntimeError(
                f"could not fetch pretrained weights for {model} ({exc}); "
                "pass --weights random or a local state-dict path"
            ) from exc
        net = _BUILDERS[model](weights=None)
        net.load_state_dict(state)
    elif weights == "random":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            net = _BUILDERS[model](weights=None)
    else:
        net = _BUILDERS[model](weights=None)
        state = torch.load(weights, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
    trunk = nn.Sequential(*list(net.children())[:-2])
    trunk.eval()
    for p in trunk.parameters():
        p.requires_grad_(False)
    return trunk


def preprocess(path: str, policy: ResizePolicy) -> torch.Tensor:
    """Load one image file into a normalized (3, crop, crop) float32 tensor."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        scale = policy.side / min(w, h)
        new_w = max(policy.crop, round(w * scale))
        new_h = max(policy.crop, round(h * scale))
        img = img.resize((new_w, new_h), Image.Resampling.BILINEAR)
        left = (new_w - policy.crop) // 2
        top = (new_h - policy.crop) // 2
        img = img.crop((left, top, left + policy.crop, top + policy.crop))
        arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - CHANNEL_MEAN) / CHANNEL_STD
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())
