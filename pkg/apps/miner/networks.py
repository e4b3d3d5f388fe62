"""
Miner networks: feature extractor, parallel modulator, category-aware generator

This module provides:
- ExtractorConfig / HeadConfig: frozen hyper-parameter records
- MinerNetworks: owns every Parameter, the freeze flags and the three
  forward passes
- save_networks() / load_networks(): checkpoint plus networks.json sidecar

The modulator and the generator share one head layout (3x3 conv, relu,
3x3 conv, relu, 1x1 conv to |C| channels); the modulator pools the last
maps into scores, the generator applies relu to them.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from apps.autodiff import ops
from apps.autodiff.checkpoint import load_parameters, restore_parameters, save_parameters
from apps.autodiff.tensor import Parameter, Tensor
from apps.core.blobs import read_manifest, write_json
from apps.core.exceptions import ConfigurationError, DimensionError
from apps.core.seeding import derive_rng

logger = logging.getLogger(__name__)

SIDECAR_VERSION = 1
PARTS = ("extractor", "modulator", "generator")


@dataclass(frozen=True)
class ExtractorConfig:
    """
    Feature extractor layout

    Attributes:
        stages (tuple[tuple[int, int, int]]): (channels, num 3x3 convs, pool stride)
            per stage; every stage ends with max_pool(k=3, p=1)
        in_channels (int): Image channels
    """

    stages: tuple = ((16, 2, 2), (32, 2, 2), (64, 2, 1))
    in_channels: int = 3

    def __post_init__(self):
        if self.stride != 4:
            raise ConfigurationError(f"extractor output stride must be 4, got {self.stride}")

    @property
    def stride(self):
        return int(np.prod([stage[2] for stage in self.stages]))

    @property
    def out_channels(self):
        return self.stages[-1][0]

    def to_dict(self):
        return {"stages": [list(stage) for stage in self.stages], "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, document):
        return cls(
            stages=tuple(tuple(int(v) for v in stage) for stage in document["stages"]),
            in_channels=int(document.get("in_channels", 3)),
        )


@dataclass(frozen=True)
class HeadConfig:
    """Shared layout of the modulator and generator heads"""

    hidden: int = 64
    num_categories: int = 4

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, document):
        return cls(**document)


def _conv_parameters(name, in_channels, out_channels, kernel, rng):
    # Centered uniform fan-in scaling for weights; zero biases
    fan_in = in_channels * kernel * kernel
    bound = np.sqrt(6.0 / fan_in)
    weight = Parameter(
        rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel, kernel)),
        name=f"{name}.weight",
    )
    bias = Parameter(np.zeros(out_channels), name=f"{name}.bias")
    return weight, bias


class MinerNetworks:
    """
    The three networks and their parameters

    Attributes:
        extractor_config (ExtractorConfig): Extractor layout
        head_config (HeadConfig): Modulator/generator layout
        extractor (list[list[tuple[Parameter, Parameter]]]): Conv layers per stage
        modulator (list[tuple[Parameter, Parameter]]): Head layers
        generator (list[tuple[Parameter, Parameter]]): Head layers, same shapes
        generator_initialized (bool): Whether the generator was copied from the modulator

    Usage:
        nets = MinerNetworks(ExtractorConfig(), HeadConfig(num_categories=4), seed=7)
        features = nets.forward_extractor(Tensor(images))
        scores = nets.forward_modulator(features)
    """

    def __init__(self, extractor_config, head_config, seed=0):
        self.extractor_config = extractor_config
        self.head_config = head_config
        self.generator_initialized = False

        rng = derive_rng(seed, "networks")
        self.extractor = []
        channels = extractor_config.in_channels
        for index, (width, convs, _stride) in enumerate(extractor_config.stages):
            layers = []
            for conv in range(convs):
                layers.append(
                    _conv_parameters(f"extractor.stage{index}.conv{conv}", channels, width, 3, rng)
                )
                channels = width
            self.extractor.append(layers)

        self.modulator = self._build_head("modulator", rng)
        self.generator = self._build_head("generator", rng)

    def _build_head(self, part, rng):
        feat = self.extractor_config.out_channels
        hidden = self.head_config.hidden
        return [
            _conv_parameters(f"{part}.conv0", feat, hidden, 3, rng),
            _conv_parameters(f"{part}.conv1", hidden, hidden, 3, rng),
            _conv_parameters(f"{part}.conv2", hidden, self.head_config.num_categories, 1, rng),
        ]

    # -- parameter bookkeeping ------------------------------------------------

    def _layers(self, part):
        if part == "extractor":
            return [layer for stage in self.extractor for layer in stage]
        if part == "modulator":
            return self.modulator
        if part == "generator":
            return self.generator
        raise ConfigurationError(f"unknown network part {part}")

    def named_parameters(self, part=None):
        """
        Ordered (name, Parameter) pairs

        Args:
            part (str | None): "extractor", "modulator", "generator" or None for all
        """
        parts = PARTS if part is None else (part,)
        named = []
        for name in parts:
            for weight, bias in self._layers(name):
                named.extend([(weight.name, weight), (bias.name, bias)])
        return named

    def parameters(self, part=None):
        return [param for _, param in self.named_parameters(part)]

    def freeze(self, part):
        for param in self.parameters(part):
            param.frozen = True
            param.grad = None

    def unfreeze(self, part):
        for param in self.parameters(part):
            param.frozen = False

    def is_frozen(self, part):
        return all(param.frozen for param in self.parameters(part))

    @property
    def frozen(self):
        return {part: self.is_frozen(part) for part in PARTS}

    # -- forward passes -------------------------------------------------------

    def forward_extractor(self, images):
        """
        Feature map F of a batch of images

        Args:
            images (Tensor): [B, 3, H, W], H and W divisible by 4

        Returns:
            Tensor: [B, C_feat, H/4, W/4]

        Raises:
            DimensionError: If the input is not 4-D or not divisible by 4
        """
        images = images if isinstance(images, Tensor) else Tensor(images)
        if images.ndim != 4 or images.shape[1] != self.extractor_config.in_channels:
            raise DimensionError(f"extractor expects [B, 3, H, W], got {images.shape}")
        stride = self.extractor_config.stride
        if images.shape[2] % stride or images.shape[3] % stride:
            raise DimensionError(
                f"image size {images.shape[2:]} is not divisible by {stride}",
                {"shape": list(images.shape)},
            )

        out = images
        for layers, (_, _, pool_stride) in zip(self.extractor, self.extractor_config.stages):
            for weight, bias in layers:
                out = ops.relu(ops.conv2d(out, weight, bias, stride=1, padding=1))
            out = ops.max_pool(out, 3, pool_stride, padding=1)
        return out

    def _head(self, layers, features):
        (w0, b0), (w1, b1), (w2, b2) = layers
        out = ops.relu(ops.conv2d(features, w0, b0, padding=1))
        out = ops.relu(ops.conv2d(out, w1, b1, padding=1))
        return ops.conv2d(out, w2, b2)

    def _check_features(self, features):
        if features.ndim != 4 or features.shape[1] != self.extractor_config.out_channels:
            raise DimensionError(
                f"heads expect [B, {self.extractor_config.out_channels}, h, w], got {features.shape}"
            )

    def modulator_maps(self, features):
        """Modulator class maps before global average pooling, [B, |C|, h, w]"""
        self._check_features(features)
        return self._head(self.modulator, features)

    def forward_modulator(self, features):
        """Raw per-category scores [B, |C|]"""
        return ops.global_avg_pool(self.modulator_maps(features))

    def generator_logits(self, features):
        """Generator maps before the final relu"""
        self._check_features(features)
        return self._head(self.generator, features)

    def forward_generator(self, features):
        """Nonnegative category maps H [B, |C|, h, w]"""
        return ops.relu(self.generator_logits(features))

    # -- initialization transfer ----------------------------------------------

    def init_generator_from_modulator(self):
        """
        Copy modulator weights into the generator (deep copy, idempotent)

        Raises:
            DimensionError: If the two heads are not shape-identical
        """
        for (gw, gb), (mw, mb) in zip(self.generator, self.modulator):
            gw.assign(mw.data)
            gb.assign(mb.data)
        self.generator_initialized = True
        logger.debug("Generator initialized from modulator parameters")


def save_networks(nets, directory):
    """
    Write a checkpoint directory with the networks.json sidecar

    Returns:
        Path: The checkpoint directory
    """
    directory = Path(directory)
    save_parameters(nets.named_parameters(), directory)
    write_json(
        directory / "networks.json",
        {
            "format_version": SIDECAR_VERSION,
            "extractor": nets.extractor_config.to_dict(),
            "head": nets.head_config.to_dict(),
            "frozen": nets.frozen,
            "generator_initialized": nets.generator_initialized,
        },
    )
    return directory


def load_networks(directory):
    """
    Rebuild MinerNetworks from a checkpoint directory

    Raises:
        MissingArtifactError, FormatVersionError, ChecksumError, DimensionError
    """
    directory = Path(directory)
    sidecar = read_manifest(directory / "networks.json", SIDECAR_VERSION)
    nets = MinerNetworks(
        ExtractorConfig.from_dict(sidecar["extractor"]),
        HeadConfig.from_dict(sidecar["head"]),
    )
    restore_parameters(nets.named_parameters(), load_parameters(directory))
    for part, frozen in sidecar["frozen"].items():
        if frozen:
            nets.freeze(part)
    nets.generator_initialized = bool(sidecar["generator_initialized"])
    logger.debug(f"Loaded networks from {directory}")
    return nets
