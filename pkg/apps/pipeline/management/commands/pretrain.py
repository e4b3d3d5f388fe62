"""Pretrain the feature extractor and modulator"""

from apps.pipeline import stages
from apps.pipeline.management.base import StageCommand


class Command(StageCommand):
    help = "Pretrain the classifier and write <out>/ckpt/pretrained"
    stage = "pretrain"

    def add_arguments(self, parser):
        self.add_config_argument(parser)
        parser.add_argument("--data", default=None, help="Dataset directory (default: <out>/dataset)")
        self.add_out_argument(parser)

    def run(self, **options):
        run_config = self.load_config(options)
        result = stages.pretrain(run_config, self.run_dir, options["data"])
        return f"Pretraining finished with macro-F1 {result.macro_f1:.3f}"
