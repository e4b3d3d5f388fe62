"""
CSV tables of an evaluated mining run

Each table is a list of flat dict rows with a fixed column order, so the
same rows feed the CSV files, the XLSX workbook and the PDF summary.
"""

import csv
import logging
from pathlib import Path

logger = logging.getLogger(__name__)

# table name -> column order
TABLE_COLUMNS = {
    "regions": [
        "image_id",
        "category",
        "area",
        "steps",
        "forced",
        "precision",
        "recall",
        "iou",
        "pseudo_iou",
    ],
    "step_curve": ["T", "precision", "recall", "iou", "pseudo_iou"],
    "adaptivity_bins": ["bin", "low", "high", "median_steps", "count"],
    "newly_mined": ["step", "fraction", "count"],
    "ablations": ["scale", "precision", "recall", "iou", "pseudo_iou"],
    "gan_histogram": ["center", "q1", "p0", "p1"],
}


def report_tables(report, gan_report=None):
    """
    Collect the rows of every table present in a report

    Args:
        report (dict): MiningReport.to_dict() document
        gan_report (dict | None): Output of verify_distribution_mapping()

    Returns:
        dict[str, list[dict]]: Table name -> rows, empty tables left out
    """
    tables = {
        "regions": report.get("regions") or [],
        "step_curve": report.get("step_curve") or [],
        "adaptivity_bins": (report.get("adaptivity") or {}).get("bins") or [],
        "newly_mined": report.get("newly_mined") or [],
        "ablations": report.get("ablations") or [],
    }
    if gan_report:
        tables["gan_histogram"] = gan_report.get("histogram") or []
    return {name: rows for name, rows in tables.items() if rows}


def write_csv(path, rows, columns):
    """Write rows with a fixed header; missing cells stay empty"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row.get(key, "") for key in columns})
    return path


def write_tables(directory, tables):
    """
    Write each table as <directory>/<name>.csv

    Returns:
        list[Path]: Written files
    """
    written = []
    for name, rows in tables.items():
        written.append(write_csv(Path(directory) / f"{name}.csv", rows, TABLE_COLUMNS[name]))
    logger.info(f"Wrote {len(written)} CSV tables to {directory}")
    return written


def read_csv(path):
    """Rows of a CSV table as string dicts"""
    with Path(path).open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))
