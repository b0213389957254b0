"""Undersampling masks.

Random masks draw from SplitMix64 (Steele, Lea & Flood 2014) so the same
seed yields the same bits on any platform. Weighted sampling without
replacement uses exponential keys ``log(u) / w`` and keeps the largest,
which gives an exact sample count without rejection.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from shlr.tensor_io import read_cplx, write_cplx

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed, n):
    """First ``n`` outputs of SplitMix64 seeded with ``seed`` (as uint64)."""
    with np.errstate(over="ignore"):
        state = np.uint64(seed % (1 << 64)) + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        z = state
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def uniforms(seed, n):
    """``n`` doubles in the open interval (0, 1) from SplitMix64."""
    z = splitmix64(seed, n) >> np.uint64(11)
    return (z.astype(np.float64) + 0.5) * 2.0**-53


@dataclass
class SamplingMask:
    """Boolean sampling pattern plus generator metadata.

    A 1D mask marks phase-encoding lines and broadcasts along the readout.
    """

    bits: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim < 1 or not self.bits.any():
            raise ValueError("a mask must sample at least one location")

    def __array__(self, dtype=None, copy=None):
        return self.bits if dtype is None else self.bits.astype(dtype)

    @property
    def shape(self):
        return self.bits.shape

    @property
    def count(self):
        return int(self.bits.sum())

    @property
    def rate(self):
        return self.count / self.bits.size

    def broadcast(self, M):
        """Expand a 1D line mask to ``M x N``."""
        if self.bits.ndim != 1:
            return self
        return SamplingMask(np.broadcast_to(self.bits[None, :], (M, self.bits.size)).copy(), dict(self.meta))

    def save(self, path):
        """Write ``path`` (.cplx of 0/1) and ``path + '.hdr'`` (key=value lines)."""
        write_cplx(self.bits.astype(complex), path)
        with open(os.fspath(path) + ".hdr", "w") as fh:
            for key, value in self.meta.items():
                fh.write(f"{key}={value}\n")

    @classmethod
    def load(cls, path):
        bits = np.real(read_cplx(path)) != 0
        meta = {}
        hdr = os.fspath(path) + ".hdr"
        if os.path.exists(hdr):
            with open(hdr) as fh:
                for line in fh:
                    line = line.strip()
                    if line and "=" in line:
                        key, value = line.split("=", 1)
                        meta[key.strip()] = value.strip()
        return cls(bits, meta)


def acs_indices(N, acs):
    """Contiguous block of ``acs`` indices around DC (index ``N // 2``)."""
    start = N // 2 - acs // 2
    return np.arange(start, start + acs)


def find_acs_region(mask):
    """Fully sampled rectangle around DC of an ``M x N`` mask, as (row slice, col slice).

    The rectangle grows from the DC sample one edge at a time (top, bottom,
    left, right in turn) while the added strip is fully sampled, so both sides
    grow together and stray random samples rarely stretch it.
    """
    bits = np.asarray(mask, dtype=bool)
    if bits.ndim != 2:
        raise ValueError(f"expected an M x N mask, got shape {bits.shape}")
    M, N = bits.shape
    r0, c0 = M // 2, N // 2
    if not bits[r0, c0]:
        return slice(r0, r0), slice(c0, c0)
    top, bottom, left, right = r0, r0 + 1, c0, c0 + 1
    grown = True
    while grown:
        grown = False
        if top > 0 and bits[top - 1, left:right].all():
            top -= 1
            grown = True
        if bottom < M and bits[bottom, left:right].all():
            bottom += 1
            grown = True
        if left > 0 and bits[top:bottom, left - 1].all():
            left -= 1
            grown = True
        if right < N and bits[top:bottom, right].all():
            right += 1
            grown = True
    return slice(top, bottom), slice(left, right)


def _budget(rate, total):
    if not 0 < rate <= 1:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    # guard against 0.5 * 64 = 32.000000000000004
    return min(total, ceil(rate * total - 1e-9))


def _weighted_pick(weights, count, seed):
    """Indices of ``count`` items drawn without replacement, probability proportional to weight."""
    if count <= 0:
        return np.array([], dtype=int)
    keys = np.log(uniforms(seed, weights.size)) / weights
    order = np.lexsort((np.arange(weights.size), -keys))
    return np.sort(order[:count])


def mask_uniform(N, R, acs=0, offset=0):
    """Every ``R``-th line starting at ``offset`` plus a centred ACS block."""
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    if not 0 <= acs <= N:
        raise ValueError(f"acs must be in [0, {N}], got {acs}")
    bits = np.zeros(N, dtype=bool)
    bits[offset % R :: R] = True
    bits[acs_indices(N, acs)] = True
    return SamplingMask(bits, {"generator": "uniform", "R": R, "acs": acs, "offset": offset})


def mask_uniform_pep(N, L, R, acs=0):
    """Uniform PE-P mask: echo ``l`` samples every ``R``-th line from offset ``l mod R``."""
    cols = [mask_uniform(N, R, acs, offset=l).bits for l in range(L)]
    return SamplingMask(np.stack(cols, axis=1), {"generator": "uniform_pep", "R": R, "acs": acs})


def mask_gauss_cartesian(N, rate, acs, seed):
    """Exactly ``ceil(rate * N)`` lines: ACS block plus Gaussian-weighted random lines."""
    total = _budget(rate, N)
    if acs > total:
        raise ValueError(f"rate {rate} gives {total} lines, fewer than {acs} ACS lines")
    bits = np.zeros(N, dtype=bool)
    bits[acs_indices(N, acs)] = True
    sigma = N / 6
    weights = np.exp(-0.5 * ((np.arange(N) - N // 2) / sigma) ** 2)
    weights[bits] = 0.0
    free = np.flatnonzero(~bits)
    pick = _weighted_pick(weights[free], total - acs, seed)
    bits[free[pick]] = True
    return SamplingMask(bits, {"generator": "gauss_cartesian", "rate": rate, "acs": acs, "seed": seed})


def mask_random2d(M, N, rate, center, seed):
    """2D variable-density random mask with a fully sampled ``center x center`` block."""
    total = _budget(rate, M * N)
    if center < 0 or center > min(M, N) or center * center > total:
        raise ValueError(f"center block {center}x{center} exceeds the {total}-point budget")
    bits = np.zeros((M, N), dtype=bool)
    bits[np.ix_(acs_indices(M, center), acs_indices(N, center))] = True
    dm = (np.arange(M) - M // 2) / (M / 6)
    dn = (np.arange(N) - N // 2) / (N / 6)
    weights = np.exp(-0.5 * (dm[:, None] ** 2 + dn[None, :] ** 2)).ravel()
    flat = bits.ravel()
    free = np.flatnonzero(~flat)
    pick = _weighted_pick(weights[free], total - center * center, seed)
    flat[free[pick]] = True
    return SamplingMask(
        flat.reshape(M, N), {"generator": "random2d", "rate": rate, "center": center, "seed": seed}
    )


def apply_partial_fourier(mask, fraction, axis=-1):
    """Drop the highest positive frequencies along ``axis``.

    Lines with centred index ``>= ceil(fraction * N) - N // 2`` are removed.
    """
    if not 0.5 < fraction <= 1:
        raise ValueError(f"partial Fourier fraction must be in (1/2, 1], got {fraction}")
    bits = np.array(mask, dtype=bool)
    N = bits.shape[axis]
    cut = ceil(fraction * N - 1e-9) - N // 2
    keep = (np.arange(N) - N // 2) < cut
    shape = [1] * bits.ndim
    shape[axis] = N
    bits &= keep.reshape(shape)
    meta = dict(getattr(mask, "meta", {}))
    meta["pf"] = fraction
    meta["pf_side"] = "positive_discarded"
    return SamplingMask(bits, meta)
