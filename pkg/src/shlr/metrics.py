"""Reconstruction quality metrics on coil-combined magnitude images."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CSV_HEADER = ("dataset", "method", "mask", "rlne", "mssim", "runtime_s", "iters")


@dataclass
class MetricReport:
    rlne: float
    mssim: float
    runtime_seconds: float = 0.0
    iterations: int = 0


def _pair(ref, rec):
    ref = np.asarray(ref, dtype=float)
    rec = np.asarray(rec, dtype=float)
    if ref.shape != rec.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {rec.shape}")
    return ref, rec


def rlne(ref, rec):
    """Relative l2-norm error ``||ref - rec|| / ||ref||`` of the vectorised arrays (real or complex)."""
    ref, rec = np.asarray(ref), np.asarray(rec)
    if ref.shape != rec.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {rec.shape}")
    den = np.linalg.norm(ref)
    if den == 0:
        raise ValueError("reference image is identically zero")
    return float(np.linalg.norm(ref - rec) / den)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    size = g.size
    tmp = sliding_window_view(img, size, axis=0) @ g
    return sliding_window_view(tmp, size, axis=1) @ g


def mssim(ref, rec, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over all fully contained Gaussian windows.

    The dynamic range is ``L = max(ref)``, so ``C1 = (k1 L)**2`` and
    ``C2 = (k2 L)**2``.
    """
    ref, rec = _pair(ref, rec)
    if min(ref.shape) < window:
        raise ValueError(f"images {ref.shape} smaller than the {window}x{window} window")
    L = float(ref.max())
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    g = gaussian_window(window, sigma)
    mu_a = _filter_valid(ref, g)
    mu_b = _filter_valid(rec, g)
    var_a = _filter_valid(ref * ref, g) - mu_a**2
    var_b = _filter_valid(rec * rec, g) - mu_b**2
    cov = _filter_valid(ref * rec, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def evaluate(ref, rec, runtime_seconds=0.0, iterations=0):
    return MetricReport(rlne(ref, rec), mssim(ref, rec), runtime_seconds, iterations)


def append_metrics_row(path, dataset, method, mask, report):
    """Append one row to a metrics CSV, writing the header for a new file."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(CSV_HEADER)
        writer.writerow(
            [dataset, method, mask, f"{report.rlne:.8g}", f"{report.mssim:.8g}",
             f"{report.runtime_seconds:.6g}", report.iterations]
        )
