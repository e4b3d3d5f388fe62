"""Generate the synthetic dataset"""

from apps.pipeline import stages
from apps.pipeline.management.base import StageCommand


class Command(StageCommand):
    help = "Generate the synthetic scene dataset into <out>/dataset"
    stage = "gen_data"

    def add_arguments(self, parser):
        self.add_config_argument(parser)
        self.add_out_argument(parser)

    def run(self, **options):
        run_config = self.load_config(options)
        dataset = stages.generate_data(run_config, self.run_dir)
        return f"Generated {len(dataset)} scenes in {self.run_dir.dataset_dir}"
