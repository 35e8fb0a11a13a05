from html import escape
from typing import Dict, Sequence, Tuple

Pixel = Tuple[float, float]


class SVG:
    """Standalone SVG document built as a string."""

    def __init__(self) -> None:
        self.svg = ""

    def header(self, width: int, height: int, manifest: str = "") -> None:
        self.svg += f"""<?xml version="1.0" standalone="no"?>
<svg version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" xmlns="http://www.w3.org/2000/svg">
<!-- manifest: {manifest} -->
<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>
"""  # noqa: E501

    def group_start(self, attr: Dict[str, str]) -> None:
        g_attr = [f'{key}="{escape(value)}"' for key, value in attr.items()]
        self.svg += f'<g {" ".join(g_attr)}>\n'

    def group_end(self) -> None:
        self.svg += "</g>\n"

    def filled_rectangle(
        self, x1: float, y1: float, x2: float, y2: float, fill: str, extra: str = ""
    ) -> None:
        width = x2 - x1
        height = y2 - y1
        self.svg += (
            f'<rect x="{x1:.1f}" y="{y1:.1f}" width="{width:.1f}" '
            f'height="{height:.1f}" fill="{fill}" {extra}/>\n'
        )

    def line(
        self,
        a: Pixel,
        b: Pixel,
        stroke: str = "black",
        width: float = 1.0,
        extra: str = "",
    ) -> None:
        self.svg += (
            f'<line x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
            f'stroke="{stroke}" stroke-width="{width}" {extra}/>\n'
        )

    def polyline(
        self,
        points: Sequence[Pixel],
        stroke: str = "black",
        width: float = 1.5,
        extra: str = "",
    ) -> None:
        if len(points) < 2:
            return
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self.svg += (
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width}" {extra}/>\n'
        )

    def circle(self, center: Pixel, r: float, fill: str, extra: str = "") -> None:
        self.svg += (
            f'<circle cx="{center[0]:.2f}" cy="{center[1]:.2f}" r="{r}" '
            f'fill="{fill}" {extra}/>\n'
        )

    def string(self, x: float, y: float, string: str, extra: str = "") -> None:
        self.svg += f'<text x="{x:.2f}" y="{y:.2f}" {extra}>{escape(string)}</text>\n'

    def get_svg(self) -> str:
        return f"{self.svg}</svg>\n"
