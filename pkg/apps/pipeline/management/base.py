"""
Shared behaviour of the pipeline management commands

Every command maps domain errors to the process exit code of their
failure class and leaves an error.json record in the run directory:

    config=2, data=3, training=4, numeric=5, anything else=1
"""

import logging

from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import MinerError
from apps.pipeline.rundir import RunDirectory
from apps.pipeline.runconfig import load_run_config

logger = logging.getLogger(__name__)


class StageCommand(BaseCommand):
    """
    Base class for pipeline commands

    Subclasses set `stage`, declare their arguments and implement
    run(**options) returning a one-line summary.
    """

    stage = None

    def add_config_argument(self, parser):
        parser.add_argument(
            "--config",
            default=None,
            help="RunConfig JSON (default: <out>/config.json if present, else MINER_DEFAULT_CONFIG)",
        )

    def add_out_argument(self, parser):
        parser.add_argument(
            "--out",
            default=None,
            help="Run directory (default: MINER_OUTPUT_DIR/<stage> if set, else config output_dir, else runs/<stage>)",
        )

    def load_config(self, options):
        """
        Load the RunConfig and fix the run directory

        An existing <out>/config.json is reused when --config is absent, so
        later stages run on exactly the configuration of earlier ones.
        """
        out = options.get("out")
        if options.get("config") is None and out and RunDirectory(out).config_path.exists():
            run_config = RunDirectory(out).read_config()
        else:
            run_config = load_run_config(options.get("config"))
        self.run_dir = RunDirectory.resolve(out, run_config, self.stage)
        return run_config

    def handle(self, *args, **options):
        out = options.get("out") or options.get("run_dir")
        self.run_dir = RunDirectory(out) if out else None
        try:
            summary = self.run(**options)
        except MinerError as exc:
            raise self._failure(exc) from exc
        except CommandError:
            raise
        except Exception as exc:
            raise self._failure(exc) from exc
        self.stdout.write(self.style.SUCCESS(summary))

    def _failure(self, exc):
        run_dir = self.run_dir or RunDirectory.resolve(name=self.stage)
        record = run_dir.write_error(exc)
        message = f"{record['error_type']}: {record['message']} (see {run_dir.error_path})"
        return CommandError(message, returncode=record["exit_code"])

    def run(self, **options):
        raise NotImplementedError
