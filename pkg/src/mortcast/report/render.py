"""Turn figure CSVs of a run directory into SVG files."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from .svg import heatmap_svg, line_chart_svg

log = logging.getLogger(__name__)


@dataclass
class RenderReport:
    written: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)


def _title(stem: str) -> str:
    kind, _, rest = stem.partition("_")
    return f"{kind}: {rest.replace('_', ' ')}" if rest else kind


def _heatmap(df: pd.DataFrame, title: str, diverging: bool) -> str:
    grid = df.pivot(index="age", columns="year", values="value").sort_index().sort_index(axis=1)
    return heatmap_svg(grid.to_numpy(), grid.index.tolist(), grid.columns.tolist(), title, diverging=diverging)


def render_csv(path: Path) -> dict[str, str]:
    """SVG documents (file name -> text) derived from one figure CSV."""
    stem = path.stem
    kind = stem.split("_", 1)[0]
    df = pd.read_csv(path)
    if kind == "heatmap-rates":
        return {f"{stem}.svg": _heatmap(df, _title(stem), diverging=False)}
    if kind == "heatmap-q":
        return {f"{stem}.svg": _heatmap(df, _title(stem), diverging=True)}
    if kind == "effects":
        out = {}
        for comp, part in df.groupby("component", sort=False):
            series = {
                sub: (g["index"].to_numpy(), g["exp-effect"].to_numpy()) for sub, g in part.groupby("subpop", sort=False)
            }
            out[f"{stem}_{comp}.svg"] = line_chart_svg(
                series, f"{_title(stem)} ({comp})", reference=1.0, x_label=comp, y_label="exp(effect)"
            )
        return out
    if kind == "lines":
        series = {name: (g["x"].to_numpy(), g["y"].to_numpy()) for name, g in df.groupby("series", sort=False)}
        return {f"{stem}.svg": line_chart_svg(series, _title(stem), reference=None, x_label="year", y_label="rate")}
    return {}


def render_outputs(run_dir, strict: bool = False) -> RenderReport:
    """Render every figure CSV listed in ``figures/manifest.json`` (or present).

    Missing CSVs are skipped with a warning; the caller decides whether that
    is fatal (``strict``) by inspecting :attr:`RenderReport.missing`.
    """
    figdir = Path(run_dir) / "figures"
    report = RenderReport()
    manifest = figdir / "manifest.json"
    if manifest.exists():
        names = json.loads(manifest.read_text(encoding="utf-8"))
    elif figdir.is_dir():
        names = sorted(p.name for p in figdir.glob("*.csv"))
    else:
        names = []
        report.missing.append("figures/")
    for name in names:
        path = figdir / name
        if not path.exists():
            log.warning("figure data %s missing; skipped", name)
            report.missing.append(name)
            continue
        for svg_name, text in render_csv(path).items():
            (figdir / svg_name).write_text(text, encoding="utf-8", newline="")
            report.written.append(svg_name)
    if strict and report.missing:
        log.error("%d figure inputs missing", len(report.missing))
    return report
