"""Run every stage"""

from apps.pipeline import stages
from apps.pipeline.management.base import StageCommand


class Command(StageCommand):
    help = "Run gen_data, pretrain, mine, ablations, ganverify, eval and render"
    stage = "full"

    def add_arguments(self, parser):
        self.add_config_argument(parser)
        self.add_out_argument(parser)

    def run(self, **options):
        run_config = self.load_config(options)
        document = stages.run_full(run_config, self.run_dir)
        failed = sorted(name for name, passed in document["checks"].items() if passed is False)
        summary = f"Run complete in {self.run_dir.root}; mean IoU {document['summary']['iou']:.3f}"
        if failed:
            self.stderr.write(self.style.WARNING(f"Property checks not met: {', '.join(failed)}"))
        return summary
