"""Parameter-imaging reconstruction over FE positions and T2 map estimation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from shlr.operators import ifft1d_centered
from shlr.solvers import AdmmConfig, shlr_param_reconstruct_slice
from shlr.tensor_io import write_cplx

T2_RANGE_MS = (0.0, 400.0)


@dataclass
class ParameterDataset:
    """FE x PE x echo x coil data with echo times in ms."""

    data: np.ndarray
    TEs: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.TEs = np.asarray(self.TEs, dtype=float).ravel()
        if self.data.ndim != 4:
            raise ValueError(f"parameter data must be M x N x L x J, got shape {self.data.shape}")
        if self.data.shape[2] != self.TEs.size:
            raise ValueError(f"{self.data.shape[2]} echoes but {self.TEs.size} echo times")
        if np.any(self.TEs <= 0) or np.any(np.diff(self.TEs) <= 0):
            raise ValueError("echo times must be positive and strictly increasing")


@dataclass
class T2Map:
    t2: np.ndarray
    amplitude: np.ndarray
    valid: np.ndarray

    def save(self, path):
        """Write T2 (ms) as the real part of ``path`` and the validity mask to ``<stem>_valid.cplx``."""
        base = os.fspath(path)
        stem = base[:-5] if base.endswith(".cplx") else base
        write_cplx(np.where(self.valid, self.t2, 0.0), stem + ".cplx")
        write_cplx(self.valid.astype(float), stem + "_valid.cplx")


def recon_param_dataset(Y, mask, hcfg=None, acfg=None, workers=1, full_output=False):
    """Reconstruct every FE position of a zero-filled parameter k-space dataset.

    The data are inverse transformed along FE, then each N x L x J plane is
    solved independently with the same PE-P mask. With ``full_output`` the
    per-slice ``AdmmInfo`` list is returned as well.
    """
    data = Y.data
    M, N, L, J = data.shape
    bits = np.asarray(mask, dtype=bool)
    if bits.shape != (N, L):
        raise ValueError(f"mask shape {bits.shape} does not match PE x echo plane {(N, L)}")
    acfg = AdmmConfig.for_method("shlr-p") if acfg is None else acfg
    hybrid = ifft1d_centered(data * bits[None, :, :, None], axis=0)

    def solve(m):
        return shlr_param_reconstruct_slice(hybrid[m], bits, hcfg, acfg, full_output=True)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            slices = list(pool.map(solve, range(M)))
    else:
        slices = [solve(m) for m in range(M)]
    images = ParameterDataset(np.stack([x for x, _ in slices], axis=0), Y.TEs)
    if full_output:
        return images, [info for _, info in slices]
    return images


def fit_t2(signal, TEs, t2_range=T2_RANGE_MS, floor=1e-12, max_iter=50, step_tol=1e-10):
    """Fit ``s(TE) = A exp(-TE / T2)`` by nonlinear least squares.

    A log-linear fit seeds Gauss-Newton iterations on ``(A, 1/T2)``; each
    step is halved until the residual does not grow.

    Returns
    -------
    A, T2, valid : float, float, bool
        ``valid`` is False when T2 falls outside ``t2_range`` (open below,
        closed above), ``A <= 0``, or the peak signal is at most ``floor``.
    """
    s = np.asarray(signal, dtype=float).ravel()
    te = np.asarray(TEs, dtype=float).ravel()
    if s.shape != te.shape:
        raise ValueError(f"{s.size} samples but {te.size} echo times")
    if s.size < 3:
        raise ValueError("need at least three echoes")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(te))):
        raise ValueError("signal and echo times must be finite")
    if s.max() <= floor:
        return 0.0, 0.0, False

    pos = s > 0
    if pos.sum() >= 2:
        w = s[pos]
        design = np.stack([np.ones(pos.sum()), -te[pos]], axis=1) * w[:, None]
        coef, *_ = np.linalg.lstsq(design, np.log(s[pos]) * w, rcond=None)
        amp, rate = np.exp(coef[0]), coef[1]
    else:
        amp, rate = s.max(), 1.0 / 100.0

    def sse(a, r):
        return float(np.sum((a * np.exp(-r * te) - s) ** 2))

    cost = sse(amp, rate)
    for _ in range(max_iter):
        e = np.exp(-rate * te)
        resid = amp * e - s
        jac = np.stack([e, -amp * te * e], axis=1)
        step, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
        t = 1.0
        for _ in range(40):
            new_cost = sse(amp + t * step[0], rate + t * step[1])
            if new_cost <= cost:
                break
            t *= 0.5
        else:
            break
        da, dr = t * step
        amp, rate, cost = amp + da, rate + dr, new_cost
        rel = max(abs(da) / max(abs(amp), 1e-300), abs(dr) / max(abs(rate), 1e-300))
        if rel < step_tol:
            break

    t2 = 1.0 / rate if rate > 0 else np.inf
    lo, hi = t2_range
    valid = bool(rate > 0 and lo < t2 <= hi and amp > 0)
    return float(amp), float(t2), valid


def t2_map(images, roi_threshold=0.1, t2_range=T2_RANGE_MS):
    """Pixel-wise T2 map from per-echo magnitude images.

    Parameters
    ----------
    images : ParameterDataset or (ndarray, TEs)
        ``M x N x L`` magnitude images, or ``M x N x L x J`` coil images that
        are combined by root sum of squares first.
    roi_threshold : float
        Pixels whose first-echo magnitude is below ``roi_threshold * max`` are
        skipped and marked invalid.
    """
    if isinstance(images, ParameterDataset):
        data, TEs = images.data, images.TEs
    else:
        data, TEs = images
        TEs = np.asarray(TEs, dtype=float)
    data = np.asarray(data)
    mag = np.sqrt(np.sum(np.abs(data) ** 2, axis=-1)) if data.ndim == 4 else np.abs(data)
    M, N, L = mag.shape
    first = mag[:, :, 0]
    roi = first >= roi_threshold * first.max()
    t2 = np.zeros((M, N))
    amp = np.zeros((M, N))
    valid = np.zeros((M, N), dtype=bool)
    for m, n in zip(*np.nonzero(roi)):
        amp[m, n], t2[m, n], valid[m, n] = fit_t2(mag[m, n], TEs, t2_range)
    return T2Map(t2, amp, valid)
