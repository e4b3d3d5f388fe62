"""
Report documents for an evaluated mining run

This module creates:
- PDFReportGenerator: one-document summary (run settings, mean metrics,
  property checks, step curve, adaptivity bins, scale ablations, GAN
  verification, step curve chart)
- ExcelReportGenerator: workbook with one sheet per CSV table
"""

import logging
from datetime import datetime
from pathlib import Path

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER, TA_RIGHT
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import cm
from reportlab.platypus import Image, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from apps.reports.tables import TABLE_COLUMNS

logger = logging.getLogger(__name__)

HEADER_COLOR = "#3498DB"


def _format(value):
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "PASS" if value else "FAIL"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


class PDFReportGenerator:
    """
    PDF report generator using ReportLab

    Usage:
        PDFReportGenerator().generate_report(report, checks, "run/report.pdf")
    """

    def __init__(self):
        """Initialize PDF generator with styles"""
        self.styles = getSampleStyleSheet()

        self.title_style = ParagraphStyle(
            "CustomTitle",
            parent=self.styles["Heading1"],
            fontSize=22,
            textColor=colors.HexColor("#2C3E50"),
            spaceAfter=24,
            alignment=TA_CENTER,
        )

        self.heading_style = ParagraphStyle(
            "CustomHeading",
            parent=self.styles["Heading2"],
            fontSize=14,
            textColor=colors.HexColor("#34495E"),
            spaceAfter=12,
            spaceBefore=12,
        )

    def generate_report(self, report, checks, output_path, run_info=None, gan_report=None, chart_path=None):
        """
        Generate PDF report

        Args:
            report (dict): MiningReport.to_dict() document
            checks (dict): acceptance_checks() flags
            output_path (str | Path): Where the PDF is written
            run_info (dict | None): Key settings shown under the title
            gan_report (dict | None): Distribution mapping results
            chart_path (str | Path | None): Step curve PNG to embed

        Returns:
            Path: Path to generated PDF file
        """
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        doc = SimpleDocTemplate(
            str(output_path),
            pagesize=A4,
            rightMargin=2 * cm,
            leftMargin=2 * cm,
            topMargin=2 * cm,
            bottomMargin=2 * cm,
        )

        elements = [Paragraph("Region Mining Report", self.title_style)]

        if run_info:
            lines = "<br/>".join(f"<b>{key}:</b> {value}" for key, value in run_info.items())
            elements.append(Paragraph(lines, self.styles["Normal"]))
            elements.append(Spacer(1, 0.6 * cm))

        summary = report.get("summary") or {}
        if summary:
            elements.append(Paragraph("Merged regions", self.heading_style))
            elements.append(self._create_summary(summary))

        elements.append(Paragraph("Property checks", self.heading_style))
        elements.append(self._create_table([["Check", "Result"]] + [[k, _format(v)] for k, v in checks.items()]))

        sections = [
            ("Step curve", "step_curve", report.get("step_curve")),
            ("Adaptivity by object size", "adaptivity_bins", (report.get("adaptivity") or {}).get("bins")),
            ("Single-scale ablations", "ablations", report.get("ablations")),
        ]
        for title, table, rows in sections:
            if not rows:
                continue
            elements.append(Paragraph(title, self.heading_style))
            columns = TABLE_COLUMNS[table]
            data = [columns] + [[_format(row.get(key)) for key in columns] for row in rows]
            elements.append(self._create_table(data))

        spearman = (report.get("adaptivity") or {}).get("spearman")
        if spearman is not None:
            elements.append(Spacer(1, 0.3 * cm))
            elements.append(Paragraph(f"Spearman(area, steps) = {spearman:.3f}", self.styles["Normal"]))

        if gan_report:
            elements.append(Paragraph("Distribution mapping", self.heading_style))
            rows = [
                ["toy", gan_report["kind"]],
                ["divergence before", _format(gan_report["pre_divergence"])],
                ["divergence after", _format(gan_report["post_divergence"])],
                ["discriminator accuracy", _format(gan_report["d_accuracy"])],
            ]
            elements.append(self._create_summary_rows(rows))

        if chart_path and Path(chart_path).exists():
            elements.append(Spacer(1, 0.5 * cm))
            elements.append(Image(str(chart_path), width=12 * cm, height=8 * cm))

        elements.append(Spacer(1, 1 * cm))
        footer = Paragraph(
            f"<i>Report generated: {datetime.now().strftime('%Y-%m-%d %H:%M')}</i>",
            ParagraphStyle(
                "Footer",
                parent=self.styles["Normal"],
                fontSize=8,
                textColor=colors.grey,
                alignment=TA_RIGHT,
            ),
        )
        elements.append(footer)

        doc.build(elements)
        logger.info(f"Wrote PDF report to {output_path}")
        return output_path

    def _create_table(self, data):
        """
        Create formatted table, first row is the header

        Returns:
            Table: ReportLab Table object
        """
        table = Table(data, repeatRows=1)
        table.setStyle(
            TableStyle(
                [
                    # Header styling
                    ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor(HEADER_COLOR)),
                    ("TEXTCOLOR", (0, 0), (-1, 0), colors.whitesmoke),
                    ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
                    ("FONTSIZE", (0, 0), (-1, 0), 9),
                    ("BOTTOMPADDING", (0, 0), (-1, 0), 8),
                    # Data rows styling
                    ("FONTNAME", (0, 1), (-1, -1), "Helvetica"),
                    ("FONTSIZE", (0, 1), (-1, -1), 8),
                    ("ALIGN", (1, 1), (-1, -1), "RIGHT"),
                    ("GRID", (0, 0), (-1, -1), 0.5, colors.grey),
                    ("ROWBACKGROUNDS", (0, 1), (-1, -1), [colors.white, colors.lightgrey]),
                    ("TOPPADDING", (0, 1), (-1, -1), 4),
                    ("BOTTOMPADDING", (0, 1), (-1, -1), 4),
                    ("LEFTPADDING", (0, 0), (-1, -1), 6),
                    ("RIGHTPADDING", (0, 0), (-1, -1), 6),
                ]
            )
        )
        return table

    def _create_summary(self, summary):
        rows = [
            ["Mean precision:", _format(summary.get("precision"))],
            ["Mean recall:", _format(summary.get("recall"))],
            ["Mean IoU:", _format(summary.get("iou"))],
            ["Mean pseudo-mask IoU:", _format(summary.get("pseudo_iou"))],
            ["Failed pools:", _format(summary.get("failures"))],
            ["Forced stops:", _format(summary.get("forced_stops"))],
        ]
        return self._create_summary_rows(rows)

    def _create_summary_rows(self, data):
        """Two-column key/value box"""
        summary_table = Table(data, colWidths=[8 * cm, 4 * cm])
        summary_table.setStyle(
            TableStyle(
                [
                    ("FONTNAME", (0, 0), (-1, -1), "Helvetica-Bold"),
                    ("FONTSIZE", (0, 0), (-1, -1), 11),
                    ("ALIGN", (1, 0), (1, -1), "RIGHT"),
                    ("TEXTCOLOR", (0, 0), (-1, -1), colors.HexColor("#2C3E50")),
                    ("BACKGROUND", (0, 0), (-1, -1), colors.HexColor("#ECF0F1")),
                    ("GRID", (0, 0), (-1, -1), 1, colors.HexColor("#BDC3C7")),
                    ("TOPPADDING", (0, 0), (-1, -1), 6),
                    ("BOTTOMPADDING", (0, 0), (-1, -1), 6),
                    ("LEFTPADDING", (0, 0), (-1, -1), 12),
                    ("RIGHTPADDING", (0, 0), (-1, -1), 12),
                ]
            )
        )
        return summary_table


class ExcelReportGenerator:
    """Workbook with one sheet per table, header row bold on blue"""

    header_fill = PatternFill("solid", fgColor=HEADER_COLOR.lstrip("#"))
    header_font = Font(bold=True, color="FFFFFF")

    def generate_report(self, tables, output_path):
        """
        Args:
            tables (dict[str, list[dict]]): report_tables() output
            output_path (str | Path): Where the XLSX is written

        Returns:
            Path: Path to generated workbook
        """
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        workbook = Workbook()
        workbook.remove(workbook.active)

        for name, rows in tables.items():
            sheet = workbook.create_sheet(title=name[:31])
            columns = TABLE_COLUMNS[name]
            sheet.append(columns)
            for cell in sheet[1]:
                cell.fill = self.header_fill
                cell.font = self.header_font
                cell.alignment = Alignment(horizontal="center")
            for row in rows:
                sheet.append([row.get(key) for key in columns])
            for index, column in enumerate(columns, start=1):
                sheet.column_dimensions[get_column_letter(index)].width = max(12, len(column) + 4)
            sheet.freeze_panes = "A2"

        if not workbook.sheetnames:
            workbook.create_sheet(title="empty")
        workbook.save(output_path)
        logger.info(f"Wrote XLSX report with {len(tables)} sheets to {output_path}")
        return output_path
