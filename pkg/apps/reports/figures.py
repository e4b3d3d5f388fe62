"""
PNG figures drawn with Pillow

- render_mining_panel(): one image's mining history. Each row is one
  category: the input, the map stored at every step, a marker tile for
  how the pool closed, and the final merged region over the input.
- render_line_chart(): simple multi-series line chart of a curve table.
"""

import logging
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from apps.miner.engine import resize_maps
from apps.scenes.storage import image_to_pil

logger = logging.getLogger(__name__)

TILE = 96
GAP = 4
HEADER = 18
BACKGROUND = (255, 255, 255)
TEXT = (44, 62, 80)
MINED_TINT = np.array([231.0, 76.0, 60.0])
SERIES_COLORS = [
    (52, 152, 219),
    (231, 76, 60),
    (39, 174, 96),
    (142, 68, 173),
    (243, 156, 18),
]


def _font():
    return ImageFont.load_default()


def _centered_text(draw, box, text, fill=TEXT):
    left, top, right, bottom = draw.textbbox((0, 0), text, font=_font())
    x = box[0] + (box[2] - box[0] - (right - left)) / 2
    y = box[1] + (box[3] - box[1] - (bottom - top)) / 2
    draw.text((x, y), text, fill=fill, font=_font())


def map_to_pil(values, size):
    """Grayscale tile of a [h, w] map in [0, 1]; mined regions are dark"""
    resized = resize_maps(values, size, size)
    pixels = np.clip(np.round(resized * 255.0), 0, 255).astype(np.uint8)
    return Image.fromarray(pixels).convert("RGB")


def overlay_region(image, region, alpha=0.6):
    """Tint the pixels of a boolean [H, W] region on a [3, H, W] image"""
    pixels = np.transpose(np.asarray(image, dtype=np.float64), (1, 2, 0)) * 255.0
    pixels[region] = (1 - alpha) * pixels[region] + alpha * MINED_TINT
    return Image.fromarray(np.clip(np.round(pixels), 0, 255).astype(np.uint8))


def _close_label(pool):
    if pool.failed:
        return "Failed"
    if pool.forced:
        return "Max steps"
    return "Stop"


def render_mining_panel(sample, image_pools, merged_maps, path, theta_fg=0.5, tile=TILE):
    """
    Draw the mining history of one image

    Args:
        sample (SceneSample): The image and its labels
        image_pools (dict[int, RegionMapPool]): Pools of the image
        merged_maps (dict[int, np.ndarray]): M^f_j at image resolution
        path (str | Path): Output PNG
        theta_fg (float): Foreground threshold for the merged region
        tile (int): Tile edge in pixels

    Returns:
        Path: Written file
    """
    categories = sorted(image_pools)
    max_steps = max([m.step for pool in image_pools.values() for m in pool.maps] + [0])
    columns = ["input"] + [f"t={t}" for t in range(1, max_steps + 1)] + ["", "merged"]
    width = len(columns) * (tile + GAP) + GAP + HEADER * 2
    height = HEADER + max(len(categories), 1) * (tile + GAP) + GAP

    panel = Image.new("RGB", (width, height), BACKGROUND)
    draw = ImageDraw.Draw(panel)
    left = HEADER * 2
    for index, name in enumerate(columns):
        x = left + GAP + index * (tile + GAP)
        _centered_text(draw, (x, 0, x + tile, HEADER), name)

    input_tile = image_to_pil(sample.image).resize((tile, tile), Image.Resampling.NEAREST)
    for row, category in enumerate(categories):
        pool = image_pools[category]
        y = HEADER + GAP + row * (tile + GAP)
        _centered_text(draw, (0, y, left, y + tile), f"c{category}")

        x = left + GAP
        panel.paste(input_tile, (x, y))
        for region_map in pool.maps:
            x = left + GAP + region_map.step * (tile + GAP)
            panel.paste(map_to_pil(region_map.values, tile), (x, y))

        # marker sits right after the last stored map
        last = pool.maps[-1].step if pool.maps else 0
        x = left + GAP + (last + 1) * (tile + GAP)
        draw.rectangle([x, y, x + tile - 1, y + tile - 1], fill=(236, 240, 241), outline=(189, 195, 199))
        _centered_text(draw, (x, y, x + tile, y + tile), _close_label(pool))

        x = left + GAP + (len(columns) - 1) * (tile + GAP)
        region = 1.0 - merged_maps[category] >= theta_fg
        merged_tile = overlay_region(sample.image, region).resize((tile, tile), Image.Resampling.NEAREST)
        panel.paste(merged_tile, (x, y))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    panel.save(path, format="PNG")
    logger.debug(f"Rendered mining panel for {sample.id} to {path}")
    return path


def render_line_chart(series, path, title="", x_label="", y_range=(0.0, 1.0), size=(480, 320)):
    """
    Draw one polyline per series

    Args:
        series (dict[str, list[tuple[float, float]]]): Name -> (x, y) points
        path (str | Path): Output PNG
        title (str): Drawn above the plot area
        x_label (str): Drawn under the x axis
        y_range (tuple | None): Fixed y limits; None fits the data

    Returns:
        Path: Written file
    """
    width, height = size
    margin_left, margin_right, margin_top, margin_bottom = 44, 110, 28, 36
    image = Image.new("RGB", size, BACKGROUND)
    draw = ImageDraw.Draw(image)

    points = [point for values in series.values() for point in values]
    xs = [x for x, _ in points] or [0.0, 1.0]
    ys = [y for _, y in points] or [0.0, 1.0]
    x_low, x_high = min(xs), max(xs)
    y_low, y_high = y_range if y_range is not None else (min(ys), max(ys))
    if x_high == x_low:
        x_high = x_low + 1.0
    if y_high == y_low:
        y_high = y_low + 1.0

    plot = (margin_left, margin_top, width - margin_right, height - margin_bottom)

    def to_pixel(x, y):
        px = plot[0] + (x - x_low) / (x_high - x_low) * (plot[2] - plot[0])
        py = plot[3] - (y - y_low) / (y_high - y_low) * (plot[3] - plot[1])
        return px, py

    draw.rectangle(plot, outline=(127, 140, 141))
    _centered_text(draw, (0, 0, width, margin_top), title)
    _centered_text(draw, (plot[0], plot[3] + 14, plot[2], height), x_label)
    for value in (y_low, y_high):
        _, py = to_pixel(x_low, value)
        draw.text((4, py - 6), f"{value:.2f}", fill=TEXT, font=_font())
    for value in (x_low, x_high):
        px, _ = to_pixel(value, y_low)
        draw.text((px - 6, plot[3] + 2), f"{value:g}", fill=TEXT, font=_font())

    for index, (name, values) in enumerate(series.items()):
        color = SERIES_COLORS[index % len(SERIES_COLORS)]
        pixels = [to_pixel(x, y) for x, y in values]
        if len(pixels) > 1:
            draw.line(pixels, fill=color, width=2)
        for px, py in pixels:
            draw.ellipse([px - 2, py - 2, px + 2, py + 2], fill=color)
        legend_y = margin_top + index * 16
        draw.line([(plot[2] + 8, legend_y + 6), (plot[2] + 24, legend_y + 6)], fill=color, width=2)
        draw.text((plot[2] + 28, legend_y), name, fill=TEXT, font=_font())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path, format="PNG")
    return path


def render_report_charts(report, directory, gan_report=None):
    """
    Line charts of the step curve, newly-mined fractions and GAN histogram

    Returns:
        list[Path]: Written files
    """
    directory = Path(directory)
    written = []
    curve = report.get("step_curve") or []
    if curve:
        series = {
            key: [(row["T"], row[key]) for row in curve]
            for key in ("precision", "recall", "iou", "pseudo_iou")
        }
        written.append(
            render_line_chart(series, directory / "step_curve.png", "Merged regions by T", "T")
        )
    newly_mined = report.get("newly_mined") or []
    if newly_mined:
        series = {"newly mined": [(row["step"], row["fraction"]) for row in newly_mined]}
        written.append(
            render_line_chart(series, directory / "newly_mined.png", "Newly mined area", "step", None)
        )
    if gan_report and gan_report.get("histogram"):
        rows = gan_report["histogram"]
        series = {key: [(row["center"], row[key]) for row in rows] for key in ("q1", "p0", "p1")}
        written.append(
            render_line_chart(series, directory / "gan_histogram.png", "Mapped density", "x", None)
        )
    return written
