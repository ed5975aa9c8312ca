# src/charts.py
"""SVG-графики результатов: линии, точки, полосы ошибок и размах."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from lxml import etree

from .errors import UsageError

SVG_NS = 'http://www.w3.org/2000/svg'

# Палитра фиксирована: порядок серий → цвет
PALETTE = (
    '#4a90d9', '#d94a4a', '#4ab36b', '#d9a04a', '#8e5ad9',
    '#4ac0c0', '#c04a9a', '#7a7a7a', '#a0c04a', '#4a5ad9',
)

MARGIN_LEFT = 60
MARGIN_RIGHT = 150
MARGIN_TOP = 50
MARGIN_BOTTOM = 50
PLOT_WIDTH = 520
PLOT_HEIGHT = 280


@dataclass
class Series:
    label: str
    points: list[tuple[float, float]]
    # Полуширина полосы для каждой точки (например, стандартная ошибка)
    band: list[float] | None = None
    # Размах (min, max) для каждой точки; рисуется вертикальными усами
    ranges: list[tuple[float, float]] | None = None


@dataclass
class Chart:
    title: str
    x_label: str
    y_label: str
    series: list[Series] = field(default_factory=list)
    y_range: tuple[float, float] | None = (0.0, 1.0)


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _sub(parent, tag: str, text: str | None = None, **attrs) -> etree._Element:
    element = etree.SubElement(parent, f'{{{SVG_NS}}}{tag}')
    for key, value in attrs.items():
        element.set(key.replace('_', '-'), value)
    if text is not None:
        element.text = text
    return element


def _range(values: Sequence[float]) -> tuple[float, float]:
    low, high = min(values), max(values)
    if low == high:
        return low - 0.5, high + 0.5
    return low, high


def render_chart(chart: Chart) -> bytes:
    """Рисует график; одинаковый вход → побайтно одинаковый SVG."""
    if not chart.series or any(not s.points for s in chart.series):
        raise UsageError(f"График '{chart.title}': нет данных для отрисовки")

    xs = [x for s in chart.series for x, _ in s.points]
    x_min, x_max = _range(xs)
    if chart.y_range is not None:
        y_min, y_max = chart.y_range
    else:
        ys = [y for s in chart.series for _, y in s.points]
        y_min, y_max = _range(ys)

    def px(x: float) -> float:
        return MARGIN_LEFT + (x - x_min) / (x_max - x_min) * PLOT_WIDTH

    def py(y: float) -> float:
        clamped = min(max(y, y_min), y_max)
        return MARGIN_TOP + PLOT_HEIGHT - (clamped - y_min) / (y_max - y_min) * PLOT_HEIGHT

    width = MARGIN_LEFT + PLOT_WIDTH + MARGIN_RIGHT
    height = MARGIN_TOP + PLOT_HEIGHT + MARGIN_BOTTOM
    svg = etree.Element(f'{{{SVG_NS}}}svg', nsmap={None: SVG_NS})
    svg.set('viewBox', f"0 0 {width} {height}")
    svg.set('font-family', 'system-ui, -apple-system, sans-serif')

    _sub(svg, 'rect', width=str(width), height=str(height), fill='#ffffff')
    _sub(svg, 'text', chart.title, x=_fmt(MARGIN_LEFT + PLOT_WIDTH / 2), y='24',
         text_anchor='middle', font_size='16', font_weight='600', fill='#333')

    # Сетка и подписи оси Y
    num_grid = 5
    for i in range(num_grid + 1):
        value = y_min + (y_max - y_min) * i / num_grid
        y = py(value)
        _sub(svg, 'line', x1=_fmt(MARGIN_LEFT), y1=_fmt(y), x2=_fmt(MARGIN_LEFT + PLOT_WIDTH), y2=_fmt(y),
             stroke='#e0e0e0', stroke_width='1')
        _sub(svg, 'text', f"{value:.2f}", x=_fmt(MARGIN_LEFT - 8), y=_fmt(y + 4),
             text_anchor='end', font_size='11', fill='#666')

    # Подписи оси X по уникальным значениям
    for x in sorted(set(xs)):
        _sub(svg, 'text', f"{x:g}", x=_fmt(px(x)), y=_fmt(MARGIN_TOP + PLOT_HEIGHT + 18),
             text_anchor='middle', font_size='11', fill='#333')

    _sub(svg, 'text', chart.x_label, x=_fmt(MARGIN_LEFT + PLOT_WIDTH / 2), y=_fmt(height - 10),
         text_anchor='middle', font_size='12', fill='#666')
    y_mid = _fmt(MARGIN_TOP + PLOT_HEIGHT / 2)
    _sub(svg, 'text', chart.y_label, x='15', y=y_mid, text_anchor='middle', font_size='12', fill='#666',
         transform=f"rotate(-90, 15, {y_mid})")

    for index, series in enumerate(chart.series):
        color = PALETTE[index % len(PALETTE)]
        if series.band is not None and len(series.band) != len(series.points):
            raise UsageError(f"Серия '{series.label}': длина полосы не совпадает с числом точек")
        if series.ranges is not None and len(series.ranges) != len(series.points):
            raise UsageError(f"Серия '{series.label}': число диапазонов не совпадает с числом точек")
        ordered = sorted(zip(
            series.points,
            series.band or [0.0] * len(series.points),
            series.ranges or [(y, y) for _, y in series.points],
        ))
        points = [p for p, _, _ in ordered]
        band = [b for _, b, _ in ordered]
        ranges = [r for _, _, r in ordered]
        group = _sub(svg, 'g', id=f"series-{index}")

        if series.band is not None and len(points) > 1:
            upper = [f"{_fmt(px(x))},{_fmt(py(y + b))}" for (x, y), b in zip(points, band)]
            lower = [f"{_fmt(px(x))},{_fmt(py(y - b))}" for (x, y), b in zip(points, band)]
            _sub(group, 'polygon', points=' '.join(upper + lower[::-1]), fill=color, fill_opacity='0.2',
                 stroke='none')

        if series.ranges is not None:
            # Сдвиг усов по x: 6px на серию относительно центра
            shift = (index - (len(chart.series) - 1) / 2) * 6
            for (x, _), (low, high) in zip(points, ranges):
                cx = px(x) + shift
                _sub(group, 'line', x1=_fmt(cx), y1=_fmt(py(low)), x2=_fmt(cx), y2=_fmt(py(high)),
                     stroke=color, stroke_width='1.5')
                for cap in (low, high):
                    _sub(group, 'line', x1=_fmt(cx - 3), y1=_fmt(py(cap)), x2=_fmt(cx + 3), y2=_fmt(py(cap)),
                         stroke=color, stroke_width='1.5')

        if len(points) == 1:
            x, y = points[0]
            _sub(group, 'circle', cx=_fmt(px(x)), cy=_fmt(py(y)), r='4', fill=color)
        else:
            path = ' '.join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in points)
            _sub(group, 'polyline', points=path, fill='none', stroke=color, stroke_width='2')

        # Легенда справа от области графика
        legend_y = MARGIN_TOP + 10 + index * 18
        legend_x = MARGIN_LEFT + PLOT_WIDTH + 16
        _sub(svg, 'rect', x=str(legend_x), y=str(legend_y - 9), width='12', height='12', fill=color, rx='2')
        _sub(svg, 'text', series.label, x=str(legend_x + 16), y=str(legend_y + 1), font_size='11', fill='#333')

    # Оси
    _sub(svg, 'line', x1=_fmt(MARGIN_LEFT), y1=_fmt(MARGIN_TOP), x2=_fmt(MARGIN_LEFT),
         y2=_fmt(MARGIN_TOP + PLOT_HEIGHT), stroke='#333', stroke_width='1')
    _sub(svg, 'line', x1=_fmt(MARGIN_LEFT), y1=_fmt(MARGIN_TOP + PLOT_HEIGHT), x2=_fmt(MARGIN_LEFT + PLOT_WIDTH),
         y2=_fmt(MARGIN_TOP + PLOT_HEIGHT), stroke='#333', stroke_width='1')

    return etree.tostring(svg, pretty_print=True, xml_declaration=True, encoding='UTF-8')


def write_chart(chart: Chart, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(render_chart(chart))
    return path
