"""Draw mining panels"""

from apps.pipeline import stages
from apps.pipeline.management.base import StageCommand


class Command(StageCommand):
    help = "Draw per-image mining panels into <run-dir>/figures/panels"
    stage = "render"

    def add_arguments(self, parser):
        parser.add_argument("--run-dir", required=True, help="Run directory with pools/")
        parser.add_argument(
            "--image-id",
            action="append",
            dest="image_ids",
            default=None,
            help="Image to draw; repeat for several (default: the first --limit images)",
        )
        parser.add_argument("--limit", type=int, default=4, help="Images drawn without --image-id")

    def run(self, **options):
        written = stages.render(self.run_dir, options["image_ids"], options["limit"])
        return f"Rendered {len(written)} panels"
