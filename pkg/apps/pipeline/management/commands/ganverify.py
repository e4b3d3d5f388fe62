"""Toy distribution mapping check"""

from apps.pipeline import stages
from apps.pipeline.management.base import StageCommand


class Command(StageCommand):
    help = "Train the toy minimax mapper and write <out>/gan.json"
    stage = "ganverify"

    def add_arguments(self, parser):
        self.add_config_argument(parser)
        self.add_out_argument(parser)

    def run(self, **options):
        run_config = self.load_config(options)
        report = stages.verify_gan(run_config, self.run_dir)
        return (
            f"Divergence {report['pre_divergence']:.4f} -> {report['post_divergence']:.4f}, "
            f"D accuracy {report['d_accuracy']:.3f}"
        )
