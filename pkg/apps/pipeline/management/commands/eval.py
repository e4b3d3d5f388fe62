"""Evaluate a mined run"""

from apps.pipeline import stages
from apps.pipeline.management.base import StageCommand


class Command(StageCommand):
    help = "Evaluate <run-dir>/pools and write report.json, tables and documents"
    stage = "eval"

    def add_arguments(self, parser):
        parser.add_argument("--run-dir", required=True, help="Run directory with pools/")

    def run(self, **options):
        document = stages.evaluate(self.run_dir)
        return f"Mean IoU {document['summary']['iou']:.3f}; report in {self.run_dir.report_path}"
