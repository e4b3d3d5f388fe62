"""
RunConfig: the validated, fully materialized run configuration

A RunConfig holds the JSON document (every default filled in) and the
domain dataclasses built from it. Persisting `document` makes a run
directory self-describing; parsing it again yields an equal RunConfig.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings

from apps.core.exceptions import ConfigurationError, MissingArtifactError
from apps.distmap.minimax import MinimaxConfig
from apps.evaluation.metrics import EvalConfig
from apps.miner.engine import MiningConfig
from apps.miner.networks import ExtractorConfig, HeadConfig
from apps.miner.pretraining import PretrainConfig
from apps.pipeline.serializers import RunConfigSerializer, flatten_errors
from apps.scenes.synth import DatasetSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """
    Attributes:
        document (dict): Validated JSON document with all defaults
        seed (int): Global seed
        output_dir (str | None): Output root requested by the document
        dataset (DatasetSpec), extractor (ExtractorConfig), head (HeadConfig),
        pretrain (PretrainConfig), mining (MiningConfig), eval (EvalConfig),
        minimax (MinimaxConfig): Section configs
        previews (bool): Write dataset PNG previews
        render_images (int): Panels drawn by the full pipeline
    """

    document: dict
    seed: int
    output_dir: str
    dataset: DatasetSpec
    extractor: ExtractorConfig
    head: HeadConfig
    pretrain: PretrainConfig
    mining: MiningConfig
    eval: EvalConfig
    minimax: MinimaxConfig
    previews: bool = False
    render_images: int = 4

    def to_dict(self):
        return json.loads(json.dumps(self.document))

    def ablation_configs(self):
        """Single-scale mining configs, one per eval.ablation_scales entry"""
        return [MiningConfig.single_scale(scale, self.mining) for scale in self.eval.ablation_scales]


def parse_run_config(document):
    """
    Validate a RunConfig document

    Args:
        document (dict): Parsed JSON

    Returns:
        RunConfig: Config with every section materialized

    Raises:
        ConfigurationError: With the flattened field errors in details
    """
    serializer = RunConfigSerializer(data=document)
    if not serializer.is_valid():
        errors = flatten_errors(serializer.errors)
        logger.error(f"Invalid run config: {errors}")
        raise ConfigurationError("invalid run config", {"errors": errors})

    data = json.loads(json.dumps(serializer.validated_data))
    seed = data["seed"]
    dataset = dict(data["dataset"])
    previews = dataset.pop("previews")
    eval_section = dict(data["eval"])
    render_images = eval_section.pop("render_images")

    return RunConfig(
        document=data,
        seed=seed,
        output_dir=data["output_dir"],
        dataset=DatasetSpec.from_dict({**dataset, "seed": seed}),
        extractor=ExtractorConfig.from_dict({"stages": data["networks"]["stages"]}),
        head=HeadConfig(hidden=data["networks"]["hidden"], num_categories=dataset["num_categories"]),
        pretrain=PretrainConfig(**data["pretrain"]),
        mining=MiningConfig(
            **{
                **data["mining"],
                "scales": tuple(data["mining"]["scales"]),
                "batch_sizes": tuple(data["mining"]["batch_sizes"]),
                "seed": seed,
            }
        ),
        eval=EvalConfig(
            theta_fg=eval_section["theta_fg"],
            t_max=eval_section["t_max"],
            ablation_scales=tuple(eval_section["ablation_scales"]),
        ),
        minimax=MinimaxConfig(**data["minimax"], seed=seed),
        previews=previews,
        render_images=render_images,
    )


def load_run_config(path=None):
    """
    Read and validate a RunConfig JSON file

    Args:
        path (str | Path | None): Config file; None uses MINER_DEFAULT_CONFIG

    Raises:
        MissingArtifactError: If the file does not exist
        ConfigurationError: If it is not valid JSON or fails validation
    """
    path = Path(path or settings.MINER_DEFAULT_CONFIG)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path}", {"path": str(path)})
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}", {"path": str(path)}) from exc
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path} must contain a JSON object", {"path": str(path)})
    logger.debug(f"Loaded run config from {path}")
    return parse_run_config(document)
