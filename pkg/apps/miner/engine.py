"""
Region mining engine

One mining step t runs three stages over the train split:
1. modulator_phase: fine-tune the modulator on masked features F^t
2. generator_phase: train the generator against the frozen modulator
3. emit_and_store: emit M^t_j per present category, store or stop

Features at every scale are extracted once (the extractor is frozen) and
masked by the min over every stored map of the image, so stored maps act
as constants of step t.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from apps.autodiff import ops
from apps.autodiff.optim import sgd_step
from apps.autodiff.tensor import Tensor, no_grad
from apps.core.blobs import write_json
from apps.core.exceptions import ConfigurationError, MergeError
from apps.core.runlog import RunLog
from apps.core.seeding import derive_rng
from apps.miner.networks import save_networks
from apps.miner.pools import PoolSet, RegionMap
from apps.scenes.synth import stack_images, stack_labels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MiningConfig:
    """
    Mining hyper-parameters

    Attributes:
        scales (tuple[int]): Input resolutions s_1 < ... < s_K, each divisible by 4
        batch_sizes (tuple[int]): Batch size per scale
        lam (float): Weight of the map-size regularizer
        eps (float): Normalization stabilizer
        modulator_epochs (int): n_m
        generator_epochs (int): n_g
        lr (float): SGD step size for both phases
        weight_decay (float): L2 coefficient
        max_steps (int): Safety bound on the number of steps
        theta_mask (float): A map entry below this counts as mined
        rho_stop (float): Minimum mined fraction for a non-empty map
        theta_cls (float): Minimum modulator probability for a non-empty map
        ablation (bool): Single-scale schedule built by single_scale()
        seed (int): Seed of the per-epoch shuffles
    """

    scales: tuple = (32, 48, 64)
    batch_sizes: tuple = (32, 16, 8)
    lam: float = 0.05
    eps: float = 1e-5
    modulator_epochs: int = 15
    generator_epochs: int = 1
    lr: float = 1e-3
    weight_decay: float = 1e-4
    max_steps: int = 10
    theta_mask: float = 0.5
    rho_stop: float = 0.01
    theta_cls: float = 0.1
    ablation: bool = False
    seed: int = 0

    def __post_init__(self):
        scales = list(self.scales)
        if not self.ablation and len(scales) < 2:
            raise ConfigurationError(f"the scale schedule needs K >= 2 scales, got {scales}")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ConfigurationError(f"scales must be strictly increasing, got {scales}")
        if any(s % 4 for s in scales):
            raise ConfigurationError(f"scales must be divisible by 4, got {scales}")
        if len(self.batch_sizes) != len(scales):
            raise ConfigurationError("batch_sizes must give one batch size per scale")
        if self.eps <= 0 or self.lam < 0 or self.max_steps < 1:
            raise ConfigurationError("eps must be > 0, lam >= 0 and max_steps >= 1")

    @classmethod
    def single_scale(cls, scale, base=None):
        """
        Fixed-scale ablation schedule derived from `base`

        Raises:
            ConfigurationError: If `scale` is not one of base.scales
        """
        base = base or cls()
        if scale not in base.scales:
            raise ConfigurationError(
                f"ablation scale {scale} is not in the mining schedule {list(base.scales)}",
                {"scale": scale, "scales": list(base.scales)},
            )
        position = list(base.scales).index(scale)
        return replace(
            base,
            scales=(scale,),
            batch_sizes=(base.batch_sizes[position],),
            ablation=True,
        )

    def batch_size_for_step(self, t):
        return self.batch_sizes[min(t, len(self.scales)) - 1]

    def to_dict(self):
        document = asdict(self)
        document["scales"] = list(self.scales)
        document["batch_sizes"] = list(self.batch_sizes)
        return document


@dataclass
class MiningResult:
    """
    Output of run_mining

    Attributes:
        pools (PoolSet): Every (image, category) pool, all stopped
        history (list[dict]): Per-step phase losses and emission counts
        failures (list[dict]): Pools stopped at T_j = 0
        steps_run (int): Number of steps executed
    """

    pools: PoolSet
    history: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    steps_run: int = 0

    @property
    def natural_stops(self):
        return sum(1 for pool in self.pools if pool.stopped and not pool.forced)

    @property
    def forced_stops(self):
        return sum(1 for pool in self.pools if pool.forced)

    def summary(self):
        return {
            "steps_run": self.steps_run,
            "natural_stops": self.natural_stops,
            "forced_stops": self.forced_stops,
            "failures": self.failures,
            "history": self.history,
        }


def scale_for_step(t, scales):
    """r_t = s_t for t <= K, else s_K"""
    if t < 1:
        raise ConfigurationError(f"mining steps start at 1, got {t}")
    return scales[min(t, len(scales)) - 1]


def resize_maps(maps, height, width):
    """Bilinear-resize a stack of [..., h, w] maps without recording a tape"""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.shape[-2:] == (height, width):
        return maps
    lead = maps.shape[:-2]
    flat = maps.reshape(-1, 1, *maps.shape[-2:])
    with no_grad():
        resized = ops.bilinear_resize(Tensor(flat), height, width).data
    return resized.reshape(*lead, height, width)


def min_merge(region_maps, height, width):
    """Entrywise min of region maps, each resized to height x width first"""
    with no_grad():
        resized = [Tensor(resize_maps(m.values, height, width)) for m in region_maps]
        return ops.elementwise_min(resized).data


def accumulated_mask(image_pools, height, width, steps_before=None):
    """
    Min over every stored map of every category of one image

    Args:
        image_pools (dict[int, RegionMapPool]): Pools of one image
        height, width (int): Target resolution
        steps_before (int | None): Only use maps with step < steps_before

    Returns:
        np.ndarray: [height, width] mask; all ones when nothing is stored
    """
    region_maps = [
        m
        for pool in image_pools.values()
        for m in pool.maps
        if steps_before is None or m.step < steps_before
    ]
    if not region_maps:
        return np.ones((height, width))
    return min_merge(region_maps, height, width)


def mask_features(features, mask):
    """
    F^t = F * mask, broadcast over channels

    Args:
        features (Tensor | np.ndarray): [B, C, h, w]
        mask (np.ndarray): [B, 1, h, w], treated as a constant

    Returns:
        Tensor: Masked features
    """
    features = features if isinstance(features, Tensor) else Tensor(features)
    return ops.multiply(features, Tensor(np.asarray(mask, dtype=np.float64)))


def merge_final(pool, height, width, horizon=None):
    """
    M^f_j: entrywise min of every stored map, upsampled to height x width

    Args:
        horizon (int | None): Only merge maps of steps <= horizon

    Raises:
        MergeError: If no map falls within the horizon
    """
    region_maps = [m for m in pool.maps if horizon is None or m.step <= horizon]
    if not region_maps:
        raise MergeError(
            f"pool {pool.image_id}/c{pool.category} is empty",
            {"image_id": pool.image_id, "category": pool.category, "horizon": horizon},
        )
    return min_merge(region_maps, height, width)


class FeatureCache:
    """
    Frozen-extractor features of a fixed sample list, one array per scale

    Usage:
        cache = FeatureCache(nets, dataset.train)
        features = cache.features(48)  # [N, C_feat, 12, 12]
    """

    def __init__(self, nets, samples, batch_size=16):
        self.nets = nets
        self.samples = list(samples)
        self.batch_size = batch_size
        self.images = stack_images(self.samples)
        self.labels = stack_labels(self.samples)
        self._features = {}

    def features(self, scale):
        if scale not in self._features:
            chunks = []
            with no_grad():
                for start in range(0, len(self.samples), self.batch_size):
                    batch = self.images[start : start + self.batch_size]
                    resized = resize_maps(batch, scale, scale)
                    chunks.append(self.nets.forward_extractor(Tensor(resized)).data)
            self._features[scale] = np.concatenate(chunks)
            logger.debug(f"Cached features at scale {scale}: {self._features[scale].shape}")
        return self._features[scale]

    def masked_features(self, pools, t, scale):
        """F^t for every sample: features at `scale` masked by maps of steps < t"""
        features = self.features(scale)
        height, width = features.shape[-2:]
        masks = np.stack(
            [
                accumulated_mask(pools.for_image(sample.id), height, width, steps_before=t)
                for sample in self.samples
            ]
        )[:, None]
        return features * masks


def _batches(count, batch_size, rng):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def modulator_phase(nets, cache, pools, config, t, run_log=None):
    """
    Train the modulator for n_m epochs on F^t with the extractor and generator frozen

    Returns:
        list[float]: Mean loss per epoch
    """
    run_log = run_log or RunLog()
    nets.freeze("extractor")
    nets.freeze("generator")
    nets.unfreeze("modulator")

    scale = scale_for_step(t, config.scales)
    masked = cache.masked_features(pools, t, scale)
    batch_size = config.batch_size_for_step(t)
    losses = []
    for epoch in range(1, config.modulator_epochs + 1):
        rng = derive_rng(config.seed, "modulator", t, epoch)
        epoch_losses = []
        for index in _batches(len(masked), batch_size, rng):
            scores = nets.forward_modulator(Tensor(masked[index]))
            loss = ops.multilabel_bce(scores, cache.labels[index])
            loss.backward()
            sgd_step(nets.parameters("modulator"), config.lr, config.weight_decay)
            epoch_losses.append(loss.item())
        losses.append(float(np.mean(epoch_losses)))
        logger.info(f"Step {t} modulator epoch {epoch}/{config.modulator_epochs}: loss={losses[-1]:.4f}")
        run_log.emit("modulator_epoch", step=t, epoch=epoch, scale=scale, loss=losses[-1])

    nets.freeze("modulator")
    return losses


def generator_loss(nets, masked, labels, config):
    """
    L_g = -L_cls(F~^t) + lam * L_reg for one batch

    Args:
        nets (MinerNetworks): Modulator frozen, generator trainable
        masked (np.ndarray): F^t batch [B, C_feat, h, w]
        labels (np.ndarray): [B, |C|] binary
        config (MiningConfig): lam and eps

    Returns:
        tuple[Tensor, np.ndarray]: Scalar loss and the region maps M~^t [B, |C|, h, w]
    """
    features = Tensor(masked)
    keep = labels > 0.5
    maps = ops.normalize_map(nets.forward_generator(features), config.eps)
    refined = ops.multiply(features, ops.channel_min(maps, keep))
    classification = ops.multilabel_bce(nets.forward_modulator(refined), labels)

    # -(1/|C_pos|) sum_j ||M_j||_F per image, averaged over the batch
    weights = keep / keep.sum(axis=1, keepdims=True)
    norms = ops.frobenius_norm(maps)
    regularizer = ops.scale(ops.total(ops.multiply(norms, Tensor(weights))), -1.0 / len(masked))

    loss = ops.add(ops.scale(classification, -1.0), ops.scale(regularizer, config.lam))
    return loss, maps.data


def generator_phase(nets, cache, pools, config, t, run_log=None):
    """
    Train the generator for n_g epochs under the frozen modulator

    Returns:
        list[dict]: Per epoch {"loss", "mean_map"}, mean_map over present categories
    """
    run_log = run_log or RunLog()
    nets.freeze("extractor")
    nets.freeze("modulator")
    nets.unfreeze("generator")

    scale = scale_for_step(t, config.scales)
    masked = cache.masked_features(pools, t, scale)
    batch_size = config.batch_size_for_step(t)
    history = []
    for epoch in range(1, config.generator_epochs + 1):
        rng = derive_rng(config.seed, "generator", t, epoch)
        losses, map_means = [], []
        for index in _batches(len(masked), batch_size, rng):
            labels = cache.labels[index]
            loss, maps = generator_loss(nets, masked[index], labels, config)
            loss.backward()
            sgd_step(nets.parameters("generator"), config.lr, config.weight_decay)
            losses.append(loss.item())
            map_means.append(maps.mean(axis=(2, 3))[labels > 0.5].mean())
        record = {"loss": float(np.mean(losses)), "mean_map": float(np.mean(map_means))}
        history.append(record)
        logger.info(
            f"Step {t} generator epoch {epoch}/{config.generator_epochs}: "
            f"loss={record['loss']:.4f} mean_map={record['mean_map']:.3f}"
        )
        run_log.emit("generator_epoch", step=t, epoch=epoch, scale=scale, **record)

    nets.freeze("generator")
    return history


def is_empty_map(values, score, config):
    """
    Stop test for one emitted map

    Empty when the fraction of entries below theta_mask is under rho_stop,
    or when the modulator probability on F^t is under theta_cls.
    """
    mined_fraction = float(np.mean(values < config.theta_mask))
    return mined_fraction < config.rho_stop or float(score) < config.theta_cls


def emit_maps(nets, masked, config, batch_size=16):
    """
    Region maps and modulator probabilities on F^t

    Returns:
        tuple[np.ndarray, np.ndarray]: maps [N, |C|, h, w], probabilities [N, |C|]
    """
    maps, probabilities = [], []
    with no_grad():
        for start in range(0, len(masked), batch_size):
            features = Tensor(masked[start : start + batch_size])
            maps.append(ops.normalize_map(nets.forward_generator(features), config.eps).data)
            probabilities.append(expit(nets.forward_modulator(features).data))
    return np.concatenate(maps), np.concatenate(probabilities)


def emit_and_store(nets, cache, pools, config, t, run_log=None):
    """
    Emit M^t_j for every open pool and store it or stop the pool

    Returns:
        dict: {"stored", "stopped", "failures": [{"image_id", "category"}]}
    """
    run_log = run_log or RunLog()
    scale = scale_for_step(t, config.scales)
    masked = cache.masked_features(pools, t, scale)
    maps, probabilities = emit_maps(nets, masked, config)

    outcome = {"stored": 0, "stopped": 0, "failures": []}
    for row, sample in enumerate(cache.samples):
        for category, pool in pools.for_image(sample.id).items():
            if pool.stopped:
                continue
            values = maps[row, category]
            if is_empty_map(values, probabilities[row, category], config):
                pool.stop(t - 1)
                outcome["stopped"] += 1
                run_log.emit("pool_stopped", step=t, image_id=sample.id, category=category, stop_step=t - 1)
                if pool.failed:
                    logger.warning(f"Mining failure: {sample.id} category {category} empty at step 1")
                    outcome["failures"].append({"image_id": sample.id, "category": category})
                    run_log.emit("mining_failure", step=t, image_id=sample.id, category=category)
            else:
                pool.append(RegionMap(values.copy(), category, t, scale))
                outcome["stored"] += 1

    run_log.emit("emit", step=t, scale=scale, stored=outcome["stored"], stopped=outcome["stopped"])
    logger.info(f"Step {t}: stored {outcome['stored']} maps, stopped {outcome['stopped']} pools")
    return outcome


def save_snapshot(nets, pools, t, scale, directory):
    """Write ckpt/steps/step_<t>/ with networks, pools and snapshot.json"""
    target = Path(directory) / f"step_{t}"
    save_networks(nets, target / "nets")
    pools.save(target / "pools")
    write_json(target / "snapshot.json", {"step": t, "scale": scale})
    return target


def run_mining(nets, samples, config, run_log=None, snapshot_dir=None, cache=None):
    """
    Mine region maps until every pool is stopped or max_steps is reached

    Args:
        nets (MinerNetworks): Pretrained, extractor frozen
        samples (list[SceneSample]): Images to mine (the train split)
        config (MiningConfig): Hyper-parameters
        run_log (RunLog | None): Event sink
        snapshot_dir (Path | None): Where per-step snapshots go
        cache (FeatureCache | None): Reuse precomputed features

    Returns:
        MiningResult: Pools and diagnostics
    """
    run_log = run_log or RunLog()
    nets.freeze("extractor")
    if not nets.generator_initialized:
        nets.init_generator_from_modulator()

    cache = cache or FeatureCache(nets, samples)
    pools = PoolSet.for_samples(cache.samples)
    result = MiningResult(pools=pools)
    logger.info(
        f"Mining {len(pools)} pools over {len(cache.samples)} images "
        f"with scales {list(config.scales)}"
    )

    for t in range(1, config.max_steps + 1):
        if pools.all_stopped():
            break
        scale = scale_for_step(t, config.scales)
        modulator_losses = modulator_phase(nets, cache, pools, config, t, run_log)
        generator_history = generator_phase(nets, cache, pools, config, t, run_log)
        outcome = emit_and_store(nets, cache, pools, config, t, run_log)

        result.steps_run = t
        result.failures.extend(outcome["failures"])
        result.history.append(
            {
                "step": t,
                "scale": scale,
                "modulator_losses": modulator_losses,
                "generator": generator_history,
                "stored": outcome["stored"],
                "stopped": outcome["stopped"],
            }
        )
        if snapshot_dir is not None:
            save_snapshot(nets, pools, t, scale, snapshot_dir)

    for pool in pools.open_pools:
        pool.stop(pool.maps[-1].step if pool.maps else 0, forced=True)
        logger.warning(
            f"Forced stop of {pool.image_id} category {pool.category} at max_steps={config.max_steps}"
        )
        run_log.emit("forced_stop", image_id=pool.image_id, category=pool.category, stop_step=pool.stop_step)

    logger.info(
        f"Mining finished after {result.steps_run} steps: {result.natural_stops} natural stops, "
        f"{result.forced_stops} forced, {len(result.failures)} failures"
    )
    return result
