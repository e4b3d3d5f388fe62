"""
Mined-region quality against synthetic ground truth

This module provides:
- EvalConfig: thresholds and the ablation schedule
- pseudo_mask(): per-pixel category assignment from merged region maps
- region_metrics(): precision / recall / IoU of two binary masks
- step_curve(): metrics of maps merged over the first T steps
- newly_mined_fractions(): area mined for the first time at each step
- adaptivity_stats(): rank correlation of object area and step count
- build_report(): all of the above as a MiningReport
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from apps.core.exceptions import DimensionError, InsufficientDataError, LabelError, MergeError
from apps.miner.engine import merge_final, resize_maps

logger = logging.getLogger(__name__)

BACKGROUND = -1
MIN_ADAPTIVITY_PAIRS = 20


@dataclass(frozen=True)
class EvalConfig:
    """
    Attributes:
        theta_fg (float): Foreground threshold on A_j = 1 - M^f_j
        t_max (int | None): Longest merge horizon of the step curve (None: max T_j)
        ablation_scales (tuple[int]): Fixed scales mined for the scale ablation
    """

    theta_fg: float = 0.5
    t_max: int = None
    ablation_scales: tuple = (32, 48, 64)

    def to_dict(self):
        document = asdict(self)
        document["ablation_scales"] = list(self.ablation_scales)
        return document


@dataclass
class PseudoMask:
    """
    Attributes:
        assignment (np.ndarray): int [H, W], category index or BACKGROUND (-1)
        evidence (dict[int, np.ndarray]): A_j = 1 - M^f_j per category
    """

    assignment: np.ndarray
    evidence: dict = field(default_factory=dict)

    def region(self, category):
        return self.assignment == category


@dataclass
class MiningReport:
    """
    Everything the eval stage measures

    Attributes:
        regions (list[dict]): One row per (image, category)
        step_curve (list[dict]): Mean metrics per merge horizon T
        newly_mined (list[dict]): Mean newly-mined-area fraction per step
        adaptivity (dict): Spearman correlation and per-tercile median T_j
        summary (dict): Mean precision / recall / IoU / pseudo-mask IoU
        ablations (list[dict]): Single-scale runs, filled by the pipeline
    """

    regions: list = field(default_factory=list)
    step_curve: list = field(default_factory=list)
    newly_mined: list = field(default_factory=list)
    adaptivity: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    ablations: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def pseudo_mask(merged_maps, theta_fg=0.5):
    """
    Assign each pixel to argmax_j A_j if that maximum reaches theta_fg

    Args:
        merged_maps (dict[int, np.ndarray]): M^f_j at image resolution
        theta_fg (float): Foreground threshold

    Returns:
        PseudoMask: Ties go to the lowest category index

    Raises:
        LabelError: If no category is given
    """
    if not merged_maps:
        raise LabelError("pseudo_mask needs at least one category")
    categories = sorted(merged_maps)
    evidence = {j: 1.0 - np.asarray(merged_maps[j], dtype=np.float64) for j in categories}
    stacked = np.stack([evidence[j] for j in categories])
    winner = np.asarray(categories)[stacked.argmax(axis=0)]
    assignment = np.where(stacked.max(axis=0) >= theta_fg, winner, BACKGROUND)
    return PseudoMask(assignment=assignment, evidence=evidence)


def region_metrics(predicted, truth):
    """
    Precision, recall and IoU of two binary masks

    Two empty masks score 1 on every metric; any other zero denominator
    scores 0.

    Raises:
        DimensionError: If the masks differ in shape
    """
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise DimensionError(f"mask shapes differ: {predicted.shape} vs {truth.shape}")

    intersection = int(np.sum(predicted & truth))
    union = int(np.sum(predicted | truth))
    if union == 0:
        return {"precision": 1.0, "recall": 1.0, "iou": 1.0}

    def ratio(denominator):
        return intersection / denominator if denominator else 0.0

    return {
        "precision": ratio(int(predicted.sum())),
        "recall": ratio(int(truth.sum())),
        "iou": intersection / union,
    }


def merged_map(pool, merge_size, image_size, horizon=None):
    """
    M^f_j at image resolution from the maps of steps <= horizon

    Maps are merged at merge_size (the s_K feature resolution) and then
    upsampled. A pool with nothing to merge counts as unmined: all ones.
    """
    try:
        merged = merge_final(pool, merge_size, merge_size, horizon)
    except MergeError:
        return np.ones((image_size, image_size))
    return resize_maps(merged, image_size, image_size)


def _mined_region(merged, theta_fg):
    return 1.0 - merged >= theta_fg


def _image_rows(sample, image_pools, merge_size, config, horizon=None):
    size = sample.image.shape[-1]
    merged = {j: merged_map(pool, merge_size, size, horizon) for j, pool in image_pools.items()}
    pseudo = pseudo_mask(merged, config.theta_fg)
    rows = []
    for category, pool in image_pools.items():
        truth = sample.gt_masks[category]
        metrics = region_metrics(_mined_region(merged[category], config.theta_fg), truth)
        metrics["pseudo_iou"] = region_metrics(pseudo.region(category), truth)["iou"]
        rows.append(
            {
                "image_id": sample.id,
                "category": category,
                "area": int(sample.object_areas[category]),
                "steps": int(pool.stop_step or 0),
                "forced": bool(pool.forced),
                **metrics,
            }
        )
    return rows


def _means(rows):
    keys = ("precision", "recall", "iou", "pseudo_iou")
    if not rows:
        return {key: 0.0 for key in keys}
    return {key: float(np.mean([row[key] for row in rows])) for key in keys}


def region_rows(pools, samples, merge_size, config):
    """Per-(image, category) metrics of the full merge"""
    rows = []
    for sample in samples:
        rows.extend(_image_rows(sample, pools.for_image(sample.id), merge_size, config))
    return rows


def step_curve(pools, samples, merge_size, config, t_max=None):
    """
    Mean metrics of maps merged over the first T steps, T = 1..t_max

    Pools with T_j < T contribute their full merge.

    Returns:
        list[dict]: {"T", "precision", "recall", "iou", "pseudo_iou"} per horizon
    """
    if t_max is None:
        t_max = max([pool.stop_step or 0 for pool in pools] + [1])
    curve = []
    for horizon in range(1, t_max + 1):
        rows = []
        for sample in samples:
            rows.extend(_image_rows(sample, pools.for_image(sample.id), merge_size, config, horizon))
        curve.append({"T": horizon, **_means(rows)})
    return curve


def newly_mined_fractions(pools, merge_size, theta_mask):
    """
    Mean fraction of the map area mined for the first time at each step

    A location counts as mined once a map value drops below theta_mask.

    Returns:
        list[dict]: {"step", "fraction", "count"} per step with at least one map
    """
    per_step = {}
    for pool in pools:
        mined_before = np.zeros((merge_size, merge_size), dtype=bool)
        for region_map in pool.maps:
            values = resize_maps(region_map.values, merge_size, merge_size)
            mined = values < theta_mask
            fresh = mined & ~mined_before
            per_step.setdefault(region_map.step, []).append(float(fresh.mean()))
            mined_before |= mined
    return [
        {"step": step, "fraction": float(np.mean(values)), "count": len(values)}
        for step, values in sorted(per_step.items())
    ]


def spearman(x, y):
    """Rank correlation with midranks; 0 when either side is constant"""
    rx, ry = rankdata(x), rankdata(y)
    if np.std(rx) == 0 or np.std(ry) == 0:
        return 0.0
    return float(np.corrcoef(rx, ry)[0, 1])


def adaptivity_stats(areas, steps):
    """
    Relation between object area and mining steps T_j

    Args:
        areas (list[int]): Ground-truth object areas
        steps (list[int]): T_j of the same objects

    Returns:
        dict: {"spearman", "count", "bins": [{"bin", "low", "high", "median_steps", "count"}]}

    Raises:
        InsufficientDataError: With fewer than 20 pairs
    """
    areas = np.asarray(areas, dtype=np.float64)
    steps = np.asarray(steps, dtype=np.float64)
    if len(areas) < MIN_ADAPTIVITY_PAIRS:
        raise InsufficientDataError(
            f"adaptivity needs >= {MIN_ADAPTIVITY_PAIRS} (area, steps) pairs, got {len(areas)}",
            {"count": int(len(areas))},
        )

    cuts = np.quantile(areas, [1 / 3, 2 / 3])
    which = np.digitize(areas, cuts, right=True)
    edges = [areas.min(), cuts[0], cuts[1], areas.max()]
    bins = []
    for index, name in enumerate(("small", "medium", "large")):
        members = steps[which == index]
        bins.append(
            {
                "bin": name,
                "low": float(edges[index]),
                "high": float(edges[index + 1]),
                "median_steps": float(np.median(members)) if len(members) else 0.0,
                "count": int(len(members)),
            }
        )
    return {"spearman": spearman(areas, steps), "count": int(len(areas)), "bins": bins}


def build_report(pools, samples, mining_config, config):
    """
    Evaluate a finished mining run

    Args:
        pools (PoolSet): All pools, stopped
        samples (list[SceneSample]): The mined images
        mining_config (MiningConfig): Scales and theta_mask
        config (EvalConfig): Thresholds

    Returns:
        MiningReport: Without ablations
    """
    merge_size = mining_config.scales[-1] // 4
    report = MiningReport()
    report.regions = region_rows(pools, samples, merge_size, config)
    report.summary = _means(report.regions)
    report.summary["failures"] = sum(1 for pool in pools if pool.failed)
    report.summary["forced_stops"] = sum(1 for pool in pools if pool.forced)
    report.step_curve = step_curve(pools, samples, merge_size, config, config.t_max)
    report.newly_mined = newly_mined_fractions(pools, merge_size, mining_config.theta_mask)
    try:
        report.adaptivity = adaptivity_stats(
            [row["area"] for row in report.regions], [row["steps"] for row in report.regions]
        )
    except InsufficientDataError as exc:
        logger.warning(f"Skipping adaptivity statistics: {exc.message}")
        report.adaptivity = {"spearman": None, "count": len(report.regions), "bins": []}
    logger.info(
        f"Evaluated {len(report.regions)} regions: mean IoU {report.summary['iou']:.3f}, "
        f"recall {report.summary['recall']:.3f}"
    )
    return report


def acceptance_checks(report, mining_config, gan_report=None):
    """
    Pass/fail flags of the run-level properties

    Returns:
        dict[str, bool | None]: None when the inputs to a check are missing
    """
    checks = {}
    adaptivity = report.get("adaptivity") or {}
    if adaptivity.get("spearman") is not None:
        bins = {row["bin"]: row["median_steps"] for row in adaptivity["bins"]}
        checks["spearman_at_least_0_5"] = adaptivity["spearman"] >= 0.5
        checks["large_objects_need_more_steps"] = bins["large"] > bins["small"]
    else:
        checks["spearman_at_least_0_5"] = checks["large_objects_need_more_steps"] = None

    curve = report.get("step_curve") or []
    recalls = [row["recall"] for row in curve]
    checks["recall_non_decreasing"] = all(b >= a - 0.01 for a, b in zip(recalls, recalls[1:]))
    checks["merging_gains_iou"] = (
        curve[-1]["pseudo_iou"] - curve[0]["pseudo_iou"] >= 0.05 if curve else None
    )

    fractions = {row["step"]: row["fraction"] for row in report.get("newly_mined") or []}
    last_scale_step = len(mining_config.scales)
    if 1 in fractions and last_scale_step in fractions and last_scale_step > 1:
        checks["coarse_to_fine"] = fractions[1] > fractions[last_scale_step]
    else:
        checks["coarse_to_fine"] = None

    ablations = report.get("ablations") or []
    if ablations:
        iou = report["summary"]["iou"]
        checks["multi_scale_not_worse"] = all(iou >= row["iou"] - 0.02 for row in ablations)
    else:
        checks["multi_scale_not_worse"] = None

    if gan_report:
        checks["distribution_mapped"] = gan_report["post_divergence"] < 0.1 * gan_report["pre_divergence"]
        checks["discriminator_at_equilibrium"] = 0.4 <= gan_report["d_accuracy"] <= 0.6
    return checks
