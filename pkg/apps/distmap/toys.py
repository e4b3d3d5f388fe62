"""
Toy distribution pairs for the distribution-mapping check

Each pair holds p0 (background only) and p1 (foreground plus background):
- gaussian-mixture-1d: weighted normal components on the real line
- two-moons-2d: p0 the lower moon, p1 the upper moon shifted up
- masked-patch-4x4: flattened 4x4 patches; p1 adds a bright 2x2 square
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from apps.core.exceptions import ConfigurationError

TOY_KINDS = ("gaussian-mixture-1d", "two-moons-2d", "masked-patch-4x4")


@dataclass(frozen=True)
class GaussianMixture1D:
    """
    Mixture of normals

    Attributes:
        components (tuple[tuple[float, float, float]]): (mean, std, weight) triples
    """

    components: tuple = ((0.0, 1.0, 1.0),)
    dim: int = 1

    @property
    def weights(self):
        weights = np.array([c[2] for c in self.components], dtype=np.float64)
        return weights / weights.sum()

    def sample(self, count, rng):
        """[count, 1] samples"""
        which = rng.choice(len(self.components), size=count, p=self.weights)
        means = np.array([c[0] for c in self.components])[which]
        stds = np.array([c[1] for c in self.components])[which]
        return (means + stds * rng.standard_normal(count))[:, None]

    def density(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return sum(w * norm.pdf(x, loc=m, scale=s) for (m, s, _), w in zip(self.components, self.weights))

    @property
    def mean(self):
        return float(sum(w * c[0] for c, w in zip(self.components, self.weights)))


@dataclass(frozen=True)
class Moon2D:
    """Half circle of radius 1 with Gaussian jitter"""

    upper: bool = True
    offset: tuple = (0.0, 0.0)
    noise: float = 0.1
    dim: int = 2

    def sample(self, count, rng):
        theta = rng.uniform(0.0, np.pi, size=count)
        if self.upper:
            points = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        else:
            points = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
        return points + np.asarray(self.offset) + rng.normal(scale=self.noise, size=(count, 2))

    def density(self, x):
        raise ConfigurationError("densities are only available for 1-D toys")


@dataclass(frozen=True)
class PatchDistribution:
    """
    Flattened 4x4 patches of background noise, optionally with a 2x2 bright square

    Attributes:
        foreground (bool): Whether a square is pasted at a random position
        brightness (float): Square intensity
        noise (float): Per-pixel noise amplitude
    """

    foreground: bool = False
    brightness: float = 0.9
    noise: float = 0.05
    dim: int = 16

    def sample(self, count, rng):
        base = rng.uniform(0.3, 0.6, size=(count, 1, 1))
        patches = base + rng.normal(scale=self.noise, size=(count, 4, 4))
        if self.foreground:
            rows = rng.integers(0, 3, size=count)
            cols = rng.integers(0, 3, size=count)
            for index, (row, col) in enumerate(zip(rows, cols)):
                patches[index, row : row + 2, col : col + 2] = self.brightness + rng.normal(
                    scale=self.noise, size=(2, 2)
                )
        return patches.reshape(count, 16)

    def density(self, x):
        raise ConfigurationError("densities are only available for 1-D toys")


@dataclass(frozen=True)
class ToyPair:
    """p0 / p1 of one toy kind"""

    kind: str
    p0: object
    p1: object
    params: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.p0.dim


def make_toy_pair(kind, p0_components=None, p1_components=None):
    """
    Build the distribution pair of a toy kind

    Args:
        kind (str): One of TOY_KINDS
        p0_components, p1_components: Mixture triples for the 1-D kind;
            defaults are N(0, 1) and N(4, 1)

    Raises:
        ConfigurationError: On an unknown kind
    """
    if kind == "gaussian-mixture-1d":
        p0 = GaussianMixture1D(tuple(map(tuple, p0_components or ((0.0, 1.0, 1.0),))))
        p1 = GaussianMixture1D(tuple(map(tuple, p1_components or ((4.0, 1.0, 1.0),))))
        return ToyPair(kind, p0, p1, {"p0": list(p0.components), "p1": list(p1.components)})
    if kind == "two-moons-2d":
        return ToyPair(kind, Moon2D(upper=False), Moon2D(upper=True, offset=(0.0, 0.5)))
    if kind == "masked-patch-4x4":
        return ToyPair(kind, PatchDistribution(foreground=False), PatchDistribution(foreground=True))
    raise ConfigurationError(f"unknown toy kind {kind!r}; expected one of {TOY_KINDS}")
