"""
Pipeline stages

Each stage reads only the artifacts of the stages before it from the run
directory, writes its own artifacts and a <stage>.done marker, so any
stage can be rerun without recomputing earlier ones.

    gen_data -> pretrain -> mine -> (ablations) -> eval -> render
    ganverify (independent)
"""

import logging
from pathlib import Path

from apps.core.exceptions import MissingArtifactError
from apps.distmap.minimax import verify_distribution_mapping
from apps.evaluation.metrics import acceptance_checks, build_report, merged_map
from apps.miner.engine import FeatureCache, run_mining
from apps.miner.networks import MinerNetworks, load_networks, save_networks
from apps.miner.pools import PoolSet
from apps.miner.pretraining import pretrain_classifier
from apps.reports.figures import render_mining_panel, render_report_charts
from apps.reports.generators import ExcelReportGenerator, PDFReportGenerator
from apps.reports.tables import report_tables, write_tables
from apps.scenes.storage import load_dataset, save_dataset
from apps.scenes.synth import generate_dataset

logger = logging.getLogger(__name__)


def generate_data(run_config, run_dir):
    """Generate the synthetic dataset into <run>/dataset"""
    run_dir.write_config(run_config)
    dataset = generate_dataset(run_config.dataset)
    save_dataset(dataset, run_dir.dataset_dir, previews=run_config.previews)
    run_dir.mark_done(
        "gen_data",
        scenes=len(dataset),
        train=len(dataset.train_indices),
        eval=len(dataset.eval_indices),
    )
    return dataset


def pretrain(run_config, run_dir, data_dir=None):
    """
    Pretrain extractor + modulator and write <run>/ckpt/pretrained

    Raises:
        MissingArtifactError: If the dataset is absent
        PretrainingFailedError: If the macro-F1 gate is missed
    """
    run_dir.write_config(run_config)
    data_dir = Path(data_dir or run_dir.dataset_dir)
    run_dir.require(data_dir)
    dataset = load_dataset(data_dir)

    nets = MinerNetworks(run_config.extractor, run_config.head, seed=run_config.seed)
    result = pretrain_classifier(nets, dataset, run_config.pretrain, run_dir.run_log("pretrain"))
    save_networks(nets, run_dir.pretrained_dir)
    run_dir.write_json(run_dir.root / "pretrain.json", result.to_dict())
    run_dir.mark_done("pretrain", data=str(data_dir), macro_f1=result.macro_f1)
    return result


def mine(run_config, run_dir, data_dir=None, ckpt_dir=None):
    """
    Mine region maps over the train split and write <run>/pools

    Raises:
        MissingArtifactError: If the dataset or the pretrained checkpoint is absent
    """
    run_dir.write_config(run_config)
    data_dir = Path(data_dir or run_dir.dataset_dir)
    ckpt_dir = Path(ckpt_dir or run_dir.pretrained_dir)
    run_dir.require(data_dir)
    run_dir.require(ckpt_dir)
    dataset = load_dataset(data_dir)
    nets = load_networks(ckpt_dir)

    result = run_mining(
        nets,
        dataset.train,
        run_config.mining,
        run_log=run_dir.run_log("mine"),
        snapshot_dir=run_dir.snapshots_dir,
    )
    result.pools.save(run_dir.pools_dir)
    save_networks(nets, run_dir.mined_dir)
    run_dir.write_json(run_dir.root / "mining.json", result.summary())
    run_dir.mark_done(
        "mine",
        data=str(data_dir),
        ckpt=str(ckpt_dir),
        steps_run=result.steps_run,
        natural_stops=result.natural_stops,
        forced_stops=result.forced_stops,
    )
    return result


def run_ablations(run_config, run_dir, data_dir=None, ckpt_dir=None):
    """
    Mine once per fixed scale in eval.ablation_scales

    Every ablation starts from the pretrained checkpoint. Only summary
    metrics are kept, in <run>/ablations.json.
    """
    data_dir = Path(data_dir or run_dir.dataset_dir)
    ckpt_dir = Path(ckpt_dir or run_dir.pretrained_dir)
    run_dir.require(data_dir)
    run_dir.require(ckpt_dir)
    dataset = load_dataset(data_dir)
    samples = dataset.train
    cache = None

    rows = []
    for config in run_config.ablation_configs():
        nets = load_networks(ckpt_dir)
        # the frozen extractor is identical for every ablation
        cache = cache or FeatureCache(nets, samples)
        result = run_mining(nets, samples, config, run_log=run_dir.run_log("ablation"), cache=cache)
        summary = build_report(result.pools, samples, config, run_config.eval).summary
        rows.append({"scale": config.scales[0], "steps_run": result.steps_run, **summary})
        logger.info(f"Ablation at scale {config.scales[0]}: mean IoU {summary['iou']:.3f}")

    run_dir.write_json(run_dir.ablations_path, {"ablations": rows})
    run_dir.mark_done("ablations", scales=[row["scale"] for row in rows])
    return rows


def verify_gan(run_config, run_dir):
    """Run the toy distribution mapping check and write <run>/gan.json"""
    run_dir.write_config(run_config)
    report = verify_distribution_mapping(run_config.minimax, run_dir.run_log("ganverify"))
    run_dir.write_json(run_dir.gan_path, report)
    write_tables(run_dir.tables_dir, {"gan_histogram": report["histogram"]})
    render_report_charts({}, run_dir.figures_dir, report)
    run_dir.mark_done("ganverify", post_divergence=report["post_divergence"])
    return report


def _mined_samples(run_dir, pools):
    marker = run_dir.marker("mine") if run_dir.is_done("mine") else {}
    data_dir = Path(marker.get("data") or run_dir.dataset_dir)
    run_dir.require(data_dir)
    mined = set(pools.image_ids)
    return [sample for sample in load_dataset(data_dir).samples if sample.id in mined]


def evaluate(run_dir):
    """
    Evaluate the mined pools and write report.json, tables and documents

    Ablation and GAN results are included when their stages have run.

    Raises:
        MissingArtifactError: If pools, config or dataset are absent
    """
    run_dir.require(run_dir.pools_dir)
    run_config = run_dir.read_config()
    pools = PoolSet.load(run_dir.pools_dir)
    samples = _mined_samples(run_dir, pools)

    report = build_report(pools, samples, run_config.mining, run_config.eval).to_dict()
    if run_dir.ablations_path.exists():
        report["ablations"] = run_dir.read_json(run_dir.ablations_path)["ablations"]
    gan_report = run_dir.read_json(run_dir.gan_path) if run_dir.gan_path.exists() else None
    checks = acceptance_checks(report, run_config.mining, gan_report)

    document = {**report, "checks": checks}
    if gan_report:
        document["gan"] = {key: value for key, value in gan_report.items() if key != "histogram"}
    run_dir.write_json(run_dir.report_path, document)

    tables = report_tables(report, gan_report)
    write_tables(run_dir.tables_dir, tables)
    charts = render_report_charts(report, run_dir.figures_dir, gan_report)
    ExcelReportGenerator().generate_report(tables, run_dir.root / "report.xlsx")
    PDFReportGenerator().generate_report(
        report,
        checks,
        run_dir.root / "report.pdf",
        run_info={
            "Run directory": run_dir.root,
            "Seed": run_config.seed,
            "Scales": list(run_config.mining.scales),
            "Images mined": len(samples),
        },
        gan_report=gan_report,
        chart_path=charts[0] if charts else None,
    )
    run_dir.mark_done("eval", checks=checks)
    return document


def render(run_dir, image_ids=None, limit=None):
    """
    Draw mining panels to <run>/figures/panels/<image_id>.png

    Args:
        image_ids (list[str] | None): Images to draw; None draws the first `limit`

    Raises:
        MissingArtifactError: If pools are absent or an image id is unknown
    """
    run_dir.require(run_dir.pools_dir)
    run_config = run_dir.read_config()
    pools = PoolSet.load(run_dir.pools_dir)
    if image_ids:
        unknown = sorted(set(image_ids) - set(pools.image_ids))
        if unknown:
            raise MissingArtifactError(
                f"missing artifact: pools for {', '.join(unknown)}", {"image_ids": unknown}
            )
    else:
        image_ids = pools.image_ids[:limit]

    samples = {sample.id: sample for sample in _mined_samples(run_dir, pools)}
    merge_size = run_config.mining.scales[-1] // 4
    written = []
    for image_id in image_ids:
        sample = samples[image_id]
        image_pools = pools.for_image(image_id)
        size = sample.image.shape[-1]
        merged = {j: merged_map(pool, merge_size, size) for j, pool in image_pools.items()}
        written.append(
            render_mining_panel(
                sample,
                image_pools,
                merged,
                run_dir.figures_dir / "panels" / f"{image_id}.png",
                run_config.eval.theta_fg,
            )
        )
    run_dir.mark_done("render", images=list(image_ids))
    return written


def run_full(run_config, run_dir):
    """Every stage in order; returns the report document"""
    generate_data(run_config, run_dir)
    pretrain(run_config, run_dir)
    mine(run_config, run_dir)
    if run_config.eval.ablation_scales:
        run_ablations(run_config, run_dir)
    verify_gan(run_config, run_dir)
    document = evaluate(run_dir)
    if run_config.render_images:
        render(run_dir, limit=run_config.render_images)
    run_dir.mark_done("full")
    return document
