"""
Classifier pretraining

Trains the feature extractor and the modulator jointly on the multi-label
objective, checks the macro-F1 gate on the eval split and freezes the
extractor for the rest of the run.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from apps.autodiff import ops
from apps.autodiff.optim import sgd_step
from apps.autodiff.tensor import Tensor, no_grad
from apps.core.exceptions import InsufficientDataError, PretrainingFailedError
from apps.core.runlog import RunLog
from apps.core.seeding import derive_rng
from apps.scenes.synth import stack_images, stack_labels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    """
    Pretraining hyper-parameters

    The modulator learning rate is ten times the extractor's; both drop by
    lr_decay_factor from lr_decay_epoch on.
    """

    epochs: int = 30
    lr_extractor: float = 0.01
    lr_modulator: float = 0.1
    weight_decay: float = 1e-4
    batch_size: int = 8
    lr_decay_epoch: int = 20
    lr_decay_factor: float = 0.1
    f1_gate: float = 0.95

    def to_dict(self):
        return asdict(self)


@dataclass
class PretrainResult:
    """
    Outcome of pretrain_classifier

    Attributes:
        losses (list[float]): Mean training loss per epoch
        macro_f1 (float): Eval-split macro-F1 at score threshold 0
        per_category_f1 (list[float]): Eval-split F1 per category
        passed (bool): Whether macro_f1 reached the gate
    """

    losses: list = field(default_factory=list)
    macro_f1: float = 0.0
    per_category_f1: list = field(default_factory=list)
    passed: bool = False

    def to_dict(self):
        return asdict(self)


def f1_scores(scores, labels):
    """
    Per-category and macro F1 of scores thresholded at 0

    A category with no positives and no predictions scores 1.

    Returns:
        tuple[float, list[float]]: (macro F1, per-category F1)
    """
    predicted = np.asarray(scores) > 0
    actual = np.asarray(labels) > 0.5
    per_category = []
    for j in range(actual.shape[1]):
        tp = int(np.sum(predicted[:, j] & actual[:, j]))
        fp = int(np.sum(predicted[:, j] & ~actual[:, j]))
        fn = int(np.sum(~predicted[:, j] & actual[:, j]))
        denominator = 2 * tp + fp + fn
        per_category.append(1.0 if denominator == 0 else 2 * tp / denominator)
    return float(np.mean(per_category)), per_category


def classify(nets, images, batch_size=16):
    """Modulator scores [N, |C|] on unmasked features, without recording a tape"""
    scores = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            features = nets.forward_extractor(Tensor(images[start : start + batch_size]))
            scores.append(nets.forward_modulator(features).data)
    return np.concatenate(scores)


def pretrain_classifier(nets, dataset, config, run_log=None, enforce_gate=True):
    """
    Train extractor + modulator, then freeze the extractor

    Args:
        nets (MinerNetworks): Freshly initialized networks (trained in place)
        dataset (Dataset): Train split is used for training, eval split for the gate
        config (PretrainConfig): Hyper-parameters
        run_log (RunLog | None): Event sink for pretrain_epoch / pretrain_gate
        enforce_gate (bool): Raise when the gate is missed

    Returns:
        PretrainResult: Loss curve and gate metrics

    Raises:
        InsufficientDataError: If the train split is empty
        PretrainingFailedError: If macro-F1 < config.f1_gate and enforce_gate
    """
    run_log = run_log or RunLog()
    train = dataset.train
    if not train:
        raise InsufficientDataError("pretraining needs a nonempty train split")

    images, labels = stack_images(train), stack_labels(train)
    nets.unfreeze("extractor")
    nets.unfreeze("modulator")
    nets.freeze("generator")

    result = PretrainResult()
    for epoch in range(1, config.epochs + 1):
        decay = config.lr_decay_factor if epoch > config.lr_decay_epoch else 1.0
        order = derive_rng(dataset.spec.seed, "pretrain", epoch).permutation(len(train))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            index = order[start : start + config.batch_size]
            features = nets.forward_extractor(Tensor(images[index]))
            loss = ops.multilabel_bce(nets.forward_modulator(features), labels[index])
            loss.backward()
            sgd_step(nets.parameters("extractor"), config.lr_extractor * decay, config.weight_decay)
            sgd_step(nets.parameters("modulator"), config.lr_modulator * decay, config.weight_decay)
            batch_losses.append(loss.item())

        mean_loss = float(np.mean(batch_losses))
        result.losses.append(mean_loss)
        logger.info(
            f"Pretrain epoch {epoch}/{config.epochs}: loss={mean_loss:.4f} "
            f"lr_modulator={config.lr_modulator * decay:g}"
        )
        run_log.emit("pretrain_epoch", epoch=epoch, loss=mean_loss, lr=config.lr_modulator * decay)

    evaluation = dataset.eval or train
    result.macro_f1, result.per_category_f1 = f1_scores(
        classify(nets, stack_images(evaluation)), stack_labels(evaluation)
    )
    result.passed = result.macro_f1 >= config.f1_gate
    nets.freeze("extractor")
    run_log.emit(
        "pretrain_gate",
        macro_f1=result.macro_f1,
        per_category_f1=result.per_category_f1,
        passed=result.passed,
    )

    if not result.passed:
        message = f"pretraining missed the macro-F1 gate: {result.macro_f1:.3f} < {config.f1_gate}"
        if enforce_gate:
            logger.error(message)
            raise PretrainingFailedError(message, result.to_dict())
        logger.warning(message)
    else:
        logger.info(f"Pretraining passed the gate with macro-F1 {result.macro_f1:.3f}")
    return result
