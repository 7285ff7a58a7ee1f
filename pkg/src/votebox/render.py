"""Bird's-eye-view SVG rendering of truth boxes and detections.

Output is plain SVG 1.1 text with fixed float formatting, so the same
scene always renders to the same bytes.
"""

from __future__ import annotations

__all__ = ["bev_svg"]

TRUTH_STYLE = 'fill="none" stroke="#2e7d32" stroke-width="2"'
DET_STYLE = 'fill="none" stroke="#c62828" stroke-width="1.5"'


def _polygon(corners_px, style: str) -> str:
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in corners_px)
    return f'  <polygon points="{points}" {style} />'


def bev_svg(truths, detections, extent=((-35.0, 35.0), (0.0, 70.0)), size=700):
    """Render truth boxes (green) and detections (red) to an SVG string.

    truths: iterable of Box3D. detections: iterable of Proposal or Box3D.
    extent: ((x_min, x_max), (y_min, y_max)) world window, meters.
    size: pixel length of the longer image side.
    """
    (x_min, x_max), (y_min, y_max) = extent
    span_x = x_max - x_min
    span_y = y_max - y_min
    if span_x <= 0.0 or span_y <= 0.0:
        raise ValueError("extent spans must be positive")
    scale = size / max(span_x, span_y)
    width = span_x * scale
    height = span_y * scale

    def to_px(xy):
        # world y is forward; SVG y grows downward
        return ((xy[0] - x_min) * scale, (y_max - xy[1]) * scale)

    lines = [
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.2f} {height:.2f}">',
        f'  <rect x="0" y="0" width="{width:.2f}" height="{height:.2f}" '
        'fill="#fafafa" stroke="#888888" stroke-width="1" />',
    ]
    for box in truths:
        lines.append(_polygon([to_px(c) for c in box.bev_corners()], TRUTH_STYLE))
    for det in detections:
        box = det.box if hasattr(det, "box") else det
        lines.append(_polygon([to_px(c) for c in box.bev_corners()], DET_STYLE))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
