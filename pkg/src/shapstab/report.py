"""Tables and ranking heatmaps rendered from a StabilityReport."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulation import StabilityReport

QUARTILE_HEADER = ["m", "Average", "Quartile 1", "Quartile 2", "Quartile 3", "Quartile 4"]
COLORMAP_STEPS = 256


def variance_table(report: StabilityReport) -> tuple[list[str], list[list]]:
    header = ["Variable"] + [f"Variance sum (m={s.m})" for s in report.sizes]
    rows = [
        [name] + [float(s.variance_sum[j]) for s in report.sizes]
        for j, name in enumerate(report.column_names)
    ]
    return header, rows


def quartile_table(report: StabilityReport, metric: str) -> tuple[list[str], list[list]]:
    if metric not in ("bleu", "jaccard"):
        raise ValueError(f"unknown metric {metric!r}")
    rows = []
    for s in report.sizes:
        if metric == "bleu":
            rows.append([s.m, s.mean_bleu, *s.bleu_quartiles])
        else:
            rows.append([s.m, s.mean_jaccard, *s.jaccard_quartiles])
    return list(QUARTILE_HEADER), rows


def _cell(v, digits: int | None) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if digits is None else format(float(v), f".{digits}g")
    return str(v)


def render_csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_cell(v, None) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def render_markdown(header, rows, digits: int = 6) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_cell(v, digits) for v in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def tables(report: StabilityReport) -> dict[str, tuple[list[str], list[list]]]:
    return {
        "variance": variance_table(report),
        "bleu": quartile_table(report, "bleu"),
        "jaccard": quartile_table(report, "jaccard"),
    }


def colormap(level: int) -> tuple[int, int, int]:
    """Linear blue (0) to yellow (255) ramp."""
    if not 0 <= level < COLORMAP_STEPS:
        raise ValueError(f"colormap level {level} outside [0, {COLORMAP_STEPS})")
    return level, level, COLORMAP_STEPS - 1 - level


@dataclass
class HeatmapSpec:
    """Rank positions per simulation: ``positions[s, j]`` is the rank of variable j in simulation s."""

    positions: np.ndarray

    @classmethod
    def from_rankings(cls, rankings) -> HeatmapSpec:
        orders = np.asarray(rankings, dtype=np.int64)
        if orders.ndim != 2 or orders.shape[0] == 0:
            raise ValueError("need a non-empty S x V matrix of rankings")
        n_vars = orders.shape[1]
        pos = np.empty_like(orders)
        for s, order in enumerate(orders):
            if sorted(order.tolist()) != list(range(n_vars)):
                raise ValueError(f"ranking {s} is not a permutation")
            pos[s, order] = np.arange(n_vars)
        return cls(pos)

    def pixels(self) -> np.ndarray:
        """(S, V, 3) uint8 image: top rank blue, bottom rank yellow."""
        n_vars = self.positions.shape[1]
        scale = (COLORMAP_STEPS - 1) / max(1, n_vars - 1)
        levels = np.floor(self.positions * scale + 0.5).astype(np.int64)
        lut = np.array([colormap(k) for k in range(COLORMAP_STEPS)], dtype=np.uint8)
        return lut[levels]


def ppm_bytes(pixels: np.ndarray, scale: int = 1) -> bytes:
    """Binary P6 pixmap; each cell becomes a ``scale`` x ``scale`` block."""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    img = np.repeat(np.repeat(pixels, scale, axis=0), scale, axis=1)
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def write_heatmap(report: StabilityReport, m: int, path, scale: int = 1) -> tuple[int, int]:
    """Write the ranking heatmap for background size ``m``; returns (height, width) in cells."""
    spec = HeatmapSpec.from_rankings(report.by_size(m).rankings)
    px = spec.pixels()
    with open(path, "wb") as fh:
        fh.write(ppm_bytes(px, scale))
    return px.shape[0], px.shape[1]


def read_ppm(data: bytes) -> np.ndarray:
    """Parse a P6 pixmap as written by :func:`ppm_bytes` (no comments)."""
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError("not a binary 8-bit PPM")
    w, h = (int(t) for t in parts[1].split())
    body = np.frombuffer(parts[3], dtype=np.uint8)
    if body.size != w * h * 3:
        raise ValueError(f"expected {w * h * 3} pixel bytes, got {body.size}")
    return body.reshape(h, w, 3)
