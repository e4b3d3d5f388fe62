import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from openpyxl import load_workbook
from PIL import Image

from apps.miner.pools import RegionMap, RegionMapPool
from apps.reports.figures import TILE, render_line_chart, render_mining_panel, render_report_charts
from apps.reports.generators import ExcelReportGenerator, PDFReportGenerator
from apps.reports.tables import TABLE_COLUMNS, read_csv, report_tables, write_tables
from apps.scenes.synth import SceneSample

REPORT = {
    "regions": [
        {
            "image_id": "scene-00000",
            "category": 0,
            "area": 120,
            "steps": 2,
            "forced": False,
            "precision": 0.8,
            "recall": 0.6,
            "iou": 0.5,
            "pseudo_iou": 0.5,
        }
    ],
    "step_curve": [
        {"T": 1, "precision": 0.9, "recall": 0.4, "iou": 0.35, "pseudo_iou": 0.3},
        {"T": 2, "precision": 0.8, "recall": 0.6, "iou": 0.5, "pseudo_iou": 0.5},
    ],
    "newly_mined": [{"step": 1, "fraction": 0.2, "count": 1}, {"step": 2, "fraction": 0.1, "count": 1}],
    "adaptivity": {"spearman": None, "count": 1, "bins": []},
    "summary": {"precision": 0.8, "recall": 0.6, "iou": 0.5, "pseudo_iou": 0.5, "failures": 0, "forced_stops": 0},
    "ablations": [],
}
GAN_REPORT = {
    "kind": "gaussian-mixture-1d",
    "pre_divergence": 3.2,
    "post_divergence": 0.05,
    "d_accuracy": 0.52,
    "histogram": [{"center": 0.0, "q1": 0.4, "p0": 0.39, "p1": 0.0}, {"center": 1.0, "q1": 0.2, "p0": 0.24, "p1": 0.0}],
}


class TableTests(SimpleTestCase):
    def test_empty_tables_are_left_out(self):
        tables = report_tables(REPORT)
        self.assertEqual(set(tables), {"regions", "step_curve", "newly_mined"})
        self.assertIn("gan_histogram", report_tables(REPORT, GAN_REPORT))

    def test_csv_header_follows_column_order(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_tables(tmp, report_tables(REPORT))
            self.assertEqual(len(paths), 3)
            rows = read_csv(Path(tmp) / "step_curve.csv")
            self.assertEqual(list(rows[0]), TABLE_COLUMNS["step_curve"])
            self.assertEqual(float(rows[1]["recall"]), 0.6)


class DocumentTests(SimpleTestCase):
    def test_workbook_has_one_sheet_per_table(self):
        tables = report_tables(REPORT, GAN_REPORT)
        with tempfile.TemporaryDirectory() as tmp:
            path = ExcelReportGenerator().generate_report(tables, Path(tmp) / "report.xlsx")
            workbook = load_workbook(path)
            self.assertEqual(workbook.sheetnames, list(tables))
            sheet = workbook["step_curve"]
            self.assertEqual(sheet.max_row, 3)
            self.assertEqual(sheet["C1"].value, "recall")

    def test_pdf_is_written(self):
        checks = {"recall_non_decreasing": True, "multi_scale_not_worse": None}
        with tempfile.TemporaryDirectory() as tmp:
            chart = render_report_charts(REPORT, tmp)[0]
            path = PDFReportGenerator().generate_report(
                REPORT, checks, Path(tmp) / "report.pdf", {"seed": 7}, GAN_REPORT, chart
            )
            self.assertTrue(path.read_bytes().startswith(b"%PDF"))


class FigureTests(SimpleTestCase):
    def setUp(self):
        image = np.zeros((3, 16, 16))
        image[0] = 1.0
        mask = np.zeros((16, 16), dtype=bool)
        mask[4:12, 4:12] = True
        self.sample = SceneSample(
            id="scene-00000",
            image=image,
            labels=np.array([1, 1]),
            gt_masks={0: mask, 1: ~mask},
            object_areas={0: 64, 1: 192},
        )
        stopped = RegionMapPool(image_id=self.sample.id, category=0)
        for step in (1, 2, 3):
            stopped.append(RegionMap(np.where(mask[::4, ::4], 0.0, 1.0), 0, step, 16))
        stopped.stop(3)
        failed = RegionMapPool(image_id=self.sample.id, category=1)
        failed.stop(0)
        self.pools = {0: stopped, 1: failed}

    def test_panel_layout(self):
        merged = {0: np.where(self.sample.gt_masks[0], 0.0, 1.0), 1: np.ones((16, 16))}
        with tempfile.TemporaryDirectory() as tmp:
            path = render_mining_panel(self.sample, self.pools, merged, Path(tmp) / "panel.png")
            with Image.open(path) as panel:
                width, height = panel.size
                # input, three steps, marker, merged
                self.assertGreaterEqual(width, 6 * TILE)
                self.assertLess(width, 7 * TILE)
                self.assertGreaterEqual(height, 2 * TILE)
                self.assertEqual(panel.mode, "RGB")

    def test_line_chart_with_single_point(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = render_line_chart({"recall": [(1, 0.5)]}, Path(tmp) / "chart.png", y_range=None)
            with Image.open(path) as chart:
                self.assertEqual(chart.size, (480, 320))

    def test_report_charts(self):
        with tempfile.TemporaryDirectory() as tmp:
            written = render_report_charts(REPORT, tmp, GAN_REPORT)
            self.assertEqual([p.name for p in written], ["step_curve.png", "newly_mined.png", "gan_histogram.png"])
