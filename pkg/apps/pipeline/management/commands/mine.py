"""Run multi-step region mining"""

from apps.pipeline import stages
from apps.pipeline.management.base import StageCommand


class Command(StageCommand):
    help = "Mine region maps and write <out>/pools"
    stage = "mine"

    def add_arguments(self, parser):
        self.add_config_argument(parser)
        parser.add_argument("--data", default=None, help="Dataset directory (default: <out>/dataset)")
        parser.add_argument(
            "--ckpt", default=None, help="Pretrained networks (default: <out>/ckpt/pretrained)"
        )
        self.add_out_argument(parser)

    def run(self, **options):
        run_config = self.load_config(options)
        result = stages.mine(run_config, self.run_dir, options["data"], options["ckpt"])
        return (
            f"Mining finished after {result.steps_run} steps: "
            f"{result.natural_stops} natural stops, {result.forced_stops} forced"
        )
