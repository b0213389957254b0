"""Synthetic multi-coil phantoms with piecewise-constant anatomy."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from shlr.operators import fft2d_centered
from shlr.tensor_io import write_cplx


@dataclass(frozen=True)
class Shape:
    """Axis-aligned rectangle or ellipse in pixel coordinates.

    ``center`` is (row, col); ``size`` is (height, width) for rectangles and
    the pair of semi-axes for ellipses.
    """

    kind: str
    center: tuple
    size: tuple
    intensity: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rectangle", "ellipse"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.intensity < 0:
            raise ValueError("intensity must be >= 0")

    def region(self, M, N):
        r = np.arange(M)[:, None] - self.center[0]
        c = np.arange(N)[None, :] - self.center[1]
        if self.kind == "rectangle":
            return (np.abs(r) <= self.size[0] / 2) & (np.abs(c) <= self.size[1] / 2)
        return (r / self.size[0]) ** 2 + (c / self.size[1]) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    M: int
    N: int
    J: int
    shapes: tuple
    phase_smoothness: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.shapes:
            raise ValueError("a phantom needs at least one shape")
        if self.phase_smoothness < 0 or self.noise_sigma < 0:
            raise ValueError("phase_smoothness and noise_sigma must be >= 0")
        if min(self.M, self.N, self.J) < 1:
            raise ValueError("dimensions must be positive")


def default_shapes(M, N):
    """Head-like layout: outer ellipse, two inner ellipses and a rectangle."""
    return (
        Shape("ellipse", (M / 2, N / 2), (0.42 * M, 0.36 * N), 1.0),
        Shape("ellipse", (0.42 * M, 0.40 * N), (0.12 * M, 0.08 * N), 0.45),
        Shape("ellipse", (0.60 * M, 0.58 * N), (0.08 * M, 0.12 * N), 0.7),
        Shape("rectangle", (0.46 * M, 0.62 * N), (0.10 * M, 0.06 * N), 0.25),
    )


def magnitude_image(M, N, shapes):
    """Paint shapes in order; later shapes overwrite earlier ones."""
    img = np.zeros((M, N))
    for s in shapes:
        img[s.region(M, N)] = s.intensity
    return img


def _lobes(M, N, n_lobes=4):
    rr = (np.arange(M)[:, None] - M / 2) / M
    cc = (np.arange(N)[None, :] - N / 2) / N
    out = []
    for k in range(n_lobes):
        ang = np.pi / 4 + 2 * np.pi * k / n_lobes
        r0, c0 = 0.6 * np.sin(ang), 0.6 * np.cos(ang)
        mag = np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * 0.45**2))
        phase = np.pi * (0.3 * k + 0.25 * rr * np.cos(ang) - 0.25 * cc * np.sin(ang))
        out.append(mag * np.exp(1j * phase))
    return np.stack(out, axis=-1)


def gen_sensitivities(M, N, J, rotation=0.0):
    """Smooth complex coil maps normalised to unit sum of squares at each pixel.

    Every coil mixes the same four Gaussian lobes, so the stacked maps have
    rank at most four.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    basis = _lobes(M, N)
    n_lobes = basis.shape[-1]
    lobe_ang = np.pi / 4 + 2 * np.pi * np.arange(n_lobes) / n_lobes
    coil_ang = rotation + 2 * np.pi * np.arange(J) / J + np.pi / 4
    d = np.angle(np.exp(1j * (coil_ang[:, None] - lobe_ang[None, :])))
    mix = np.exp(-(d**2) / 0.8) * np.exp(1j * 0.5 * np.arange(J))[:, None]
    S = basis @ mix.T
    return S / np.sqrt(np.sum(np.abs(S) ** 2, axis=-1, keepdims=True))


def smooth_phase(M, N, max_gradient, rng):
    """Low-order polynomial phase whose gradient magnitude stays below ``max_gradient`` rad/pixel."""
    if max_gradient == 0:
        return np.zeros((M, N))
    a = rng.uniform(-1, 1, 3)
    a = a / np.sum(np.abs(a))
    u = np.arange(M)[:, None] - M / 2
    v = np.arange(N)[None, :] - N / 2
    R = max(M, N) / 2
    # |grad| <= |(a0, a1)| + |a2| <= 1 while |u|, |v| <= R
    return max_gradient * (a[0] * u + a[1] * v + a[2] * (u * v) / R / np.sqrt(2))


def gen_pi_phantom(spec, seed=0):
    """Multi-coil image and noisy centred k-space for a parallel-imaging test.

    Returns
    -------
    truth : ndarray, M x N x J
    kspace : ndarray, M x N x J
    """
    rng = np.random.default_rng(seed)
    mag = magnitude_image(spec.M, spec.N, spec.shapes)
    phase = smooth_phase(spec.M, spec.N, spec.phase_smoothness, rng)
    S = gen_sensitivities(spec.M, spec.N, spec.J)
    truth = (mag * np.exp(1j * phase))[:, :, None] * S
    kspace = fft2d_centered(truth)
    if spec.noise_sigma > 0:
        noise = rng.standard_normal(kspace.shape) + 1j * rng.standard_normal(kspace.shape)
        kspace = kspace + spec.noise_sigma / np.sqrt(2) * noise
    return truth, kspace


def gen_t2_phantom(M, N, L, J, TEs, regions, seed=0):
    """Mono-exponential multi-echo phantom.

    Parameters
    ----------
    regions : sequence of (Shape, A, T2_ms)
        Painted in order.

    Returns
    -------
    truth : ndarray, M x N x L x J
        Images ``A * exp(-TE / T2)`` times the coil maps.
    t2_truth : ndarray, M x N
        Zero where no region is present.
    """
    TEs = np.asarray(TEs, dtype=float)
    if TEs.shape != (L,):
        raise ValueError(f"expected {L} echo times, got {TEs.shape}")
    if np.any(TEs <= 0) or np.any(np.diff(TEs) <= 0):
        raise ValueError("echo times must be positive and increasing")
    amp = np.zeros((M, N))
    t2 = np.zeros((M, N))
    for shape, A, T2 in regions:
        if T2 <= 0:
            raise ValueError("T2 must be positive")
        reg = shape.region(M, N)
        amp[reg] = A
        t2[reg] = T2
    with np.errstate(divide="ignore"):
        rate = np.where(t2 > 0, 1.0 / np.where(t2 > 0, t2, 1.0), 0.0)
    decay = amp[:, :, None] * np.exp(-TEs[None, None, :] * rate[:, :, None])
    rotation = np.random.default_rng(seed).uniform(0, 2 * np.pi)
    S = gen_sensitivities(M, N, J, rotation=rotation)
    return decay[:, :, :, None] * S[:, :, None, :], t2


def export_phantom(path, truth, kspace, spec, seed):
    """Write ``<path>_truth.cplx``, ``<path>_kspace.cplx`` and ``<path>_manifest.txt``."""
    base = os.fspath(path)
    write_cplx(truth, base + "_truth.cplx")
    write_cplx(kspace, base + "_kspace.cplx")
    with open(base + "_manifest.txt", "w") as fh:
        fields = asdict(spec)
        fields["seed"] = seed
        for key, value in fields.items():
            fh.write(f"{key}={value}\n")
