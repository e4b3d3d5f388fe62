"""
Run directory layout

    <run>/config.json        materialized RunConfig
    <run>/dataset/           scene-synth output
    <run>/ckpt/pretrained/   networks after pretraining
    <run>/ckpt/mined/        networks after mining
    <run>/ckpt/steps/        per-step mining snapshots
    <run>/pools/             region map pools
    <run>/ablations.json     single-scale ablation summaries
    <run>/gan.json           distribution mapping report
    <run>/report.json        evaluation report and property checks
    <run>/tables/            CSV tables
    <run>/figures/           PNG charts and mining panels
    <run>/run_log.jsonl      JSON-lines training events
    <run>/<stage>.done       stage completion markers
    <run>/error.json         error record of the last failed command
"""

import json
import logging
from pathlib import Path

from django.conf import settings

from apps.core.blobs import write_json
from apps.core.exceptions import MissingArtifactError, error_record
from apps.core.runlog import RunLog
from apps.pipeline.runconfig import parse_run_config

logger = logging.getLogger(__name__)


class RunDirectory:
    """
    Paths and markers of one run

    Usage:
        run_dir = RunDirectory("runs/default")
        run_dir.require(run_dir.pools_dir)
        run_dir.mark_done("mine", steps_run=4)
    """

    def __init__(self, root):
        self.root = Path(root)

    @classmethod
    def resolve(cls, out=None, run_config=None, name="default"):
        """
        Pick the run directory, first match wins:

            --out
            MINER_OUTPUT_DIR/<name>   (environment override)
            the config's output_dir
            MINER_RUNS_ROOT/<name>
        """
        if out:
            return cls(out)
        if settings.MINER_OUTPUT_DIR:
            return cls(Path(settings.MINER_OUTPUT_DIR) / name)
        if run_config is not None and run_config.output_dir:
            return cls(run_config.output_dir)
        return cls(Path(settings.MINER_RUNS_ROOT) / name)

    def create(self):
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    @property
    def config_path(self):
        return self.root / "config.json"

    @property
    def dataset_dir(self):
        return self.root / "dataset"

    @property
    def pretrained_dir(self):
        return self.root / "ckpt" / "pretrained"

    @property
    def mined_dir(self):
        return self.root / "ckpt" / "mined"

    @property
    def snapshots_dir(self):
        return self.root / "ckpt" / "steps"

    @property
    def pools_dir(self):
        return self.root / "pools"

    @property
    def ablations_path(self):
        return self.root / "ablations.json"

    @property
    def gan_path(self):
        return self.root / "gan.json"

    @property
    def report_path(self):
        return self.root / "report.json"

    @property
    def tables_dir(self):
        return self.root / "tables"

    @property
    def figures_dir(self):
        return self.root / "figures"

    @property
    def run_log_path(self):
        return self.root / settings.MINER_RUN_LOG_NAME

    @property
    def error_path(self):
        return self.root / "error.json"

    def marker_path(self, stage):
        return self.root / f"{stage}.done"

    def require(self, path):
        """
        Raises:
            MissingArtifactError: If path does not exist
        """
        path = Path(path)
        if not path.exists():
            try:
                shown = path.relative_to(self.root)
            except ValueError:
                shown = path
            suffix = "/" if not path.suffix else ""
            raise MissingArtifactError(f"missing artifact: {shown}{suffix}", {"path": str(path)})
        return path

    def write_config(self, run_config):
        self.create()
        write_json(self.config_path, run_config.to_dict())

    def read_config(self):
        self.require(self.config_path)
        return parse_run_config(json.loads(self.config_path.read_text()))

    def run_log(self, stage):
        return RunLog(self.run_log_path, stage=stage)

    def mark_done(self, stage, **info):
        self.create()
        write_json(self.marker_path(stage), {"stage": stage, **info})
        logger.info(f"Stage {stage} complete in {self.root}")

    def is_done(self, stage):
        return self.marker_path(stage).exists()

    def marker(self, stage):
        self.require(self.marker_path(stage))
        return json.loads(self.marker_path(stage).read_text())

    def write_json(self, path, document):
        self.create()
        write_json(path, document)
        return path

    def read_json(self, path):
        return json.loads(self.require(path).read_text())

    def write_error(self, exc):
        """Write error.json for exc and return the record"""
        record = error_record(exc)
        self.create()
        write_json(self.error_path, record)
        return record
