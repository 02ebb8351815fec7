from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from src.evaluation import Match
from src.representations import polar_vertices, representation_bounds, to_polygon
from src.schemas import Detection, InstanceMask, PolarPolygon, Representation

TRUTH_COLOR = "#2f00ff"
TP_COLOR = "#00ff11"
FP_COLOR = "#ff2f00"
FN_COLOR = "#ffaa00"


@dataclass
class OverlayLayer:
    name: str
    color: str
    elements: list[str] = field(default_factory=list)


def mask_outline_path(mask: InstanceMask) -> str:
    """SVG path data tracing every boundary edge between occupied and free cells."""
    frame = mask.grid.frame
    occupancy = np.pad(mask.occupancy, 1)
    cell = 1.0 / frame.scale
    segments = []
    # Vertical edges sit between horizontally adjacent cells that differ.
    rows, cols = np.nonzero(occupancy[1:-1, 1:] != occupancy[1:-1, :-1])
    for row, col in zip(rows, cols):
        x = frame.origin_x + col * cell
        y = frame.origin_y + row * cell
        segments.append(f"M{x:.2f} {y:.2f}v{cell:.2f}")
    rows, cols = np.nonzero(occupancy[1:, 1:-1] != occupancy[:-1, 1:-1])
    for row, col in zip(rows, cols):
        x = frame.origin_x + col * cell
        y = frame.origin_y + row * cell
        segments.append(f"M{x:.2f} {y:.2f}h{cell:.2f}")
    return "".join(segments)


def representation_points(rep: Representation) -> str:
    vertices = polar_vertices(rep) if isinstance(rep, PolarPolygon) else to_polygon(rep).array
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in vertices)


def _detection_element(det: Detection, color: str, label: str | None) -> list[str]:
    elements = [
        f'<polygon points="{representation_points(det.rep)}" fill="none" '
        f'stroke="{color}" stroke-width="1.5"/>'
    ]
    if label is not None:
        min_x, min_y, _, _ = representation_bounds(det.rep)
        elements.append(
            f'<text x="{min_x:.1f}" y="{max(min_y - 3, 10):.1f}" fill="{color}" '
            f'font-size="12" font-family="monospace">{label}</text>'
        )
    return elements


def build_layers(matches: Sequence[Match]) -> list[OverlayLayer]:
    truths = OverlayLayer("truth", TRUTH_COLOR)
    tps = OverlayLayer("tp", TP_COLOR)
    fps = OverlayLayer("fp", FP_COLOR)
    fns = OverlayLayer("fn", FN_COLOR)
    for match in matches:
        if match.truth is not None:
            layer = truths if match.is_tp else fns
            layer.elements.append(
                f'<path d="{mask_outline_path(match.truth.mask)}" fill="none" '
                f'stroke="{layer.color}" stroke-width="1"/>'
            )
        if match.is_tp:
            tps.elements += _detection_element(match.detection, tps.color, f"IoU {match.iou:.3f}")
        elif match.is_fp:
            fps.elements += _detection_element(match.detection, fps.color, f"FP {match.detection.confidence:.2f}")
    return [truths, fns, tps, fps]


def render_svg(image_size: tuple[int, int], layers: Sequence[OverlayLayer], title: str = "") -> str:
    width, height = image_size
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{title}</title>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#111111"/>',
    ]
    for layer in layers:
        lines.append(f'<g id="{layer.name}">')
        lines.extend(layer.elements)
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_frame_overlay(
    out_dir: Path, frame_id: str, image_size: tuple[int, int], matches: Sequence[Match]
) -> Path:
    path = Path(out_dir) / f"frame-{frame_id}.svg"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(image_size, build_layers(matches), f"frame {frame_id}"), encoding="utf-8")
    return path
