"""
Minimax training of a mapper G and a discriminator D on toy distributions

The objective as written scores generated samples high:

    min_G max_D  E_{x~p0} log[1 - D(x)] + E_{x~p1} log D(G(x))

With objective="conventional" the roles of the two terms are mirrored
(D scores p0 high). D always ascends its objective; G either descends it
("minimax") or ascends the mirrored log term ("nonsaturating").
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from apps.autodiff import ops
from apps.autodiff.optim import Adam
from apps.autodiff.tensor import Parameter, Tensor, no_grad
from apps.core.exceptions import ConfigurationError, DivergenceError, NonFiniteError
from apps.core.runlog import RunLog
from apps.core.seeding import derive_rng
from apps.distmap.divergence import energy_distance
from apps.distmap.toys import TOY_KINDS, make_toy_pair

logger = logging.getLogger(__name__)

OBJECTIVES = ("as_written", "conventional")
GENERATOR_LOSSES = ("nonsaturating", "minimax")


@dataclass(frozen=True)
class MinimaxConfig:
    """Toy minimax hyper-parameters"""

    kind: str = "gaussian-mixture-1d"
    steps: int = 3000
    batch_size: int = 256
    hidden: int = 32
    lr_generator: float = 2e-3
    lr_discriminator: float = 2e-3
    objective: str = "as_written"
    generator_loss: str = "nonsaturating"
    logit_clamp: float = 50.0
    eval_samples: int = 10000
    log_every: int = 100
    histogram_bins: int = 48
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TOY_KINDS:
            raise ConfigurationError(f"unknown toy kind {self.kind!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}")
        if self.generator_loss not in GENERATOR_LOSSES:
            raise ConfigurationError(f"generator_loss must be one of {GENERATOR_LOSSES}")

    @property
    def fake_sign(self):
        """+1 when D scores generated samples high"""
        return 1.0 if self.objective == "as_written" else -1.0

    def to_dict(self):
        return asdict(self)


class MLP:
    """
    Two hidden relu layers

    Attributes:
        layers (list[tuple[Parameter, Parameter]]): (weight, bias) per layer
    """

    def __init__(self, name, in_features, hidden, out_features, rng, zero_output=False):
        sizes = [in_features, hidden, hidden, out_features]
        self.layers = []
        for index, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            bound = np.sqrt(6.0 / fan_in)
            last = index == len(sizes) - 2
            values = (
                np.zeros((fan_out, fan_in))
                if last and zero_output
                else rng.uniform(-bound, bound, size=(fan_out, fan_in))
            )
            self.layers.append(
                (
                    Parameter(values, name=f"{name}.fc{index}.weight"),
                    Parameter(np.zeros(fan_out), name=f"{name}.fc{index}.bias"),
                )
            )

    def __call__(self, x):
        out = x
        for index, (weight, bias) in enumerate(self.layers):
            out = ops.linear(out, weight, bias)
            if index < len(self.layers) - 1:
                out = ops.relu(out)
        return out

    def parameters(self):
        return [param for layer in self.layers for param in layer]

    def set_frozen(self, frozen):
        for param in self.parameters():
            param.frozen = frozen


class Mapper:
    """Residual mapper G(x) = x + MLP(x), exactly the identity when fresh"""

    def __init__(self, dim, hidden, rng):
        self.body = MLP("generator", dim, hidden, dim, rng, zero_output=True)

    def __call__(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        return ops.add(x, self.body(x))

    def parameters(self):
        return self.body.parameters()

    def transform(self, samples):
        with no_grad():
            return self(Tensor(samples)).data


@dataclass
class MapperPair:
    """
    Trained G and D plus the training log

    Attributes:
        generator (Mapper): G
        discriminator (MLP): D, one logit per sample
        log (list[dict]): {step, d_loss, g_loss, d_accuracy} every log_every steps
    """

    generator: Mapper
    discriminator: MLP
    log: list = field(default_factory=list)

    def logits(self, samples):
        with no_grad():
            return self.discriminator(Tensor(samples)).data[:, 0]


def _mean(tensor):
    return ops.scale(ops.total(tensor), 1.0 / tensor.size)


def discriminator_accuracy(pair, p0_samples, mapped_samples, config):
    """Fraction of p0 and G(p1) samples D assigns to the right side"""
    sign = config.fake_sign
    real = pair.logits(p0_samples) * sign < 0
    fake = pair.logits(mapped_samples) * sign > 0
    return float(np.concatenate([real, fake]).mean())


def train_minimax(toy, config, run_log=None):
    """
    Alternate one D ascent step and one G step

    Args:
        toy (ToyPair): p0 / p1 samplers
        config (MinimaxConfig): Hyper-parameters
        run_log (RunLog | None): Receives minimax_progress events

    Returns:
        MapperPair: Trained networks and log

    Raises:
        DivergenceError: If a loss turns NaN/Inf, with the step index
    """
    run_log = run_log or RunLog()
    rng = derive_rng(config.seed, "minimax", "init")
    pair = MapperPair(
        generator=Mapper(toy.dim, config.hidden, rng),
        discriminator=MLP("discriminator", toy.dim, config.hidden, 1, rng),
    )
    d_optimizer = Adam(pair.discriminator.parameters(), lr=config.lr_discriminator)
    g_optimizer = Adam(pair.generator.parameters(), lr=config.lr_generator)
    monitor = derive_rng(config.seed, "minimax", "monitor")
    monitor_p0, monitor_p1 = toy.p0.sample(1000, monitor), toy.p1.sample(1000, monitor)

    sign, clamp = config.fake_sign, config.logit_clamp
    for step in range(1, config.steps + 1):
        batch_rng = derive_rng(config.seed, "minimax", step)
        real = Tensor(toy.p0.sample(config.batch_size, batch_rng))
        source = Tensor(toy.p1.sample(config.batch_size, batch_rng))
        try:
            # D ascends: loss is the negated objective
            with no_grad():
                mapped = pair.generator(source)
            d_real = pair.discriminator(real)
            d_fake = pair.discriminator(Tensor(mapped.data))
            objective = ops.add(
                _mean(ops.log_sigmoid(ops.scale(d_real, -sign), clamp)),
                _mean(ops.log_sigmoid(ops.scale(d_fake, sign), clamp)),
            )
            d_loss = ops.scale(objective, -1.0)
            d_loss.backward()
            d_optimizer.step()

            pair.discriminator.set_frozen(True)
            d_mapped = pair.discriminator(pair.generator(source))
            if config.generator_loss == "minimax":
                g_loss = _mean(ops.log_sigmoid(ops.scale(d_mapped, sign), clamp))
            else:
                g_loss = ops.scale(_mean(ops.log_sigmoid(ops.scale(d_mapped, -sign), clamp)), -1.0)
            g_loss.backward()
            g_optimizer.step()
            pair.discriminator.set_frozen(False)
        except NonFiniteError as exc:
            logger.error(f"Minimax training diverged at step {step}")
            raise DivergenceError(f"minimax loss became non-finite at step {step}", {"step": step}) from exc

        if not (np.isfinite(d_loss.item()) and np.isfinite(g_loss.item())):
            logger.error(f"Minimax training diverged at step {step}")
            raise DivergenceError(f"minimax loss is NaN at step {step}", {"step": step})

        if step % config.log_every == 0 or step == config.steps:
            accuracy = discriminator_accuracy(
                pair, monitor_p0, pair.generator.transform(monitor_p1), config
            )
            record = {
                "step": step,
                "d_loss": d_loss.item(),
                "g_loss": g_loss.item(),
                "d_accuracy": accuracy,
            }
            pair.log.append(record)
            run_log.emit("minimax_progress", **record)
            logger.debug(f"Minimax step {step}: {record}")

    return pair


def histogram_rows(toy, mapped, p0_samples, p1_samples, bins):
    """
    Density histogram of the first coordinate of q1, p0 and p1

    1-D toys report the analytic p0/p1 densities at bin centres.

    Returns:
        list[dict]: {"center", "q1", "p0", "p1"} per bin
    """
    stacked = np.concatenate([mapped[:, 0], p0_samples[:, 0], p1_samples[:, 0]])
    edges = np.linspace(stacked.min(), stacked.max(), bins + 1)
    centers = (edges[:-1] + edges[1:]) / 2
    q1_density, _ = np.histogram(mapped[:, 0], bins=edges, density=True)
    if toy.dim == 1:
        p0_density, p1_density = toy.p0.density(centers), toy.p1.density(centers)
    else:
        p0_density, _ = np.histogram(p0_samples[:, 0], bins=edges, density=True)
        p1_density, _ = np.histogram(p1_samples[:, 0], bins=edges, density=True)
    return [
        {"center": float(c), "q1": float(q), "p0": float(a), "p1": float(b)}
        for c, q, a, b in zip(centers, q1_density, p0_density, p1_density)
    ]


def verify_distribution_mapping(config, run_log=None):
    """
    Train on a toy pair and measure how close q1 = G(p1) gets to p0

    Returns:
        dict: {kind, config, pre_divergence, post_divergence, ratio,
               d_accuracy, accuracy_curve, mapped_mean, mapped_variance, histogram}
    """
    toy = make_toy_pair(config.kind)
    pair = train_minimax(toy, config, run_log)

    held_out = derive_rng(config.seed, "minimax", "held-out")
    p0_samples = toy.p0.sample(config.eval_samples, held_out)
    p1_samples = toy.p1.sample(config.eval_samples, held_out)
    mapped = pair.generator.transform(p1_samples)

    pre = energy_distance(p1_samples, p0_samples)
    post = energy_distance(mapped, p0_samples)
    report = {
        "kind": config.kind,
        "config": config.to_dict(),
        "pre_divergence": pre,
        "post_divergence": post,
        "ratio": post / pre if pre > 0 else 0.0,
        "d_accuracy": discriminator_accuracy(pair, p0_samples, mapped, config),
        "accuracy_curve": [(r["step"], r["d_accuracy"]) for r in pair.log],
        "mapped_mean": mapped.mean(axis=0).tolist(),
        "mapped_variance": mapped.var(axis=0).tolist(),
        "histogram": histogram_rows(toy, mapped, p0_samples, p1_samples, config.histogram_bins),
    }
    logger.info(
        f"Distribution mapping on {config.kind}: divergence {pre:.4f} -> {post:.4f}, "
        f"D accuracy {report['d_accuracy']:.3f}"
    )
    return report
