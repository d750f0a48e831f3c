"""Small regression helpers shared by the scaling and decay reports."""

from __future__ import annotations

import numpy as np


def r_squared(y: np.ndarray, y_model: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    y_model = np.asarray(y_model, dtype=float)
    ss_res = float(np.sum((y - y_model) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def loglog_fit(x, y) -> tuple[float, float, float]:
    """Least-squares fit log y = slope * log x + b; returns (slope, b, r2)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept), r_squared(ly, slope * lx + intercept)


def fit_through_origin(x, y) -> tuple[float, float]:
    """Least-squares fit y = c * x; returns (c, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = float(np.dot(x, y) / np.dot(x, x))
    return c, r_squared(y, c * x)
