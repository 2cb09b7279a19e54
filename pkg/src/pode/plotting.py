"""Minimal SVG emitter for forecast figures.

Colors follow the reporting convention used throughout: green dots for the
irregularly sampled observations, orange dots for ground truth over the
forecast span, purple polyline for the model's dense prediction curve.
"""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 800, 480
MARGIN = 50

GREEN = "green"
ORANGE = "orange"
PURPLE = "purple"


def _scaler(lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0

    def f(v):
        return out_lo + (v - lo) / span * (out_hi - out_lo)

    return f


def render_forecast_svg(observed_t, observed_v, truth_t, truth_v,
                        curve_t, curve_v, title=""):
    """SVG text for one sample figure."""
    all_t = np.concatenate([observed_t, truth_t, curve_t])
    all_v = np.concatenate([observed_v, truth_v, curve_v])
    sx = _scaler(all_t.min(), all_t.max(), MARGIN, WIDTH - MARGIN)
    sy = _scaler(all_v.min(), all_v.max(), HEIGHT - MARGIN, MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    if title:
        parts.append(
            f'<text x="{WIDTH // 2}" y="{MARGIN // 2}" text-anchor="middle" '
            f'font-size="16">{title}</text>'
        )

    points = " ".join(
        f"{sx(t):.2f},{sy(v):.2f}" for t, v in zip(curve_t, curve_v)
    )
    parts.append(
        f'<polyline points="{points}" fill="none" stroke="{PURPLE}" '
        'stroke-width="2"/>'
    )
    for t, v in zip(observed_t, observed_v):
        parts.append(
            f'<circle cx="{sx(t):.2f}" cy="{sy(v):.2f}" r="3" fill="{GREEN}"/>'
        )
    for t, v in zip(truth_t, truth_v):
        parts.append(
            f'<circle cx="{sx(t):.2f}" cy="{sy(v):.2f}" r="3" fill="{ORANGE}"/>'
        )

    legend = [
        (GREEN, "observed"),
        (ORANGE, "ground truth"),
        (PURPLE, "prediction"),
    ]
    for i, (color, label) in enumerate(legend):
        y = MARGIN + 18 * i
        parts.append(
            f'<circle cx="{WIDTH - MARGIN - 120}" cy="{y}" r="5" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{WIDTH - MARGIN - 108}" y="{y + 4}" '
            f'font-size="13">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def plot_sample(model, sample, normalizer, out_path, n_curve=256):
    """One figure per sample: observations, truth, dense forecast curve."""
    obs_t = sample.observed_times
    obs_v = sample.observed_values
    t_last = obs_t[-1]
    t_end = sample.times[-1]
    curve_t = np.linspace(t_last, t_end, n_curve)
    # query grid for the curve (strictly increasing past the anchor)
    from .model import ForecastRequest

    req = ForecastRequest(
        times=obs_t[None, :],
        values=normalizer.apply(obs_v)[None, :],
        query_times=curve_t,
    )
    curve_v = normalizer.invert(model.forecast(req)[0])
    svg = render_forecast_svg(
        obs_t, obs_v, sample.forecast_times, sample.forecast_values,
        curve_t, curve_v, title=out_path.rsplit("/", 1)[-1],
    )
    with open(out_path, "w") as fh:
        fh.write(svg)
    return out_path
