"""Linear operators for separable Hankel reconstruction.

Conventions
-----------
* Multi-coil images are ``M x N x J`` arrays (coil axis last).
* All Fourier transforms are unitary with DC at index ``n // 2``.
* A lifted matrix for one row (or column) concatenates the Hankel matrices of
  every coil horizontally; with virtual coils the conjugate-flipped spectra
  are appended after the real coils.
* The virtual-coil lifting is conjugate-linear, so adjoints are taken with
  respect to the real inner product ``Re <a, b>``. The resulting Gram
  operators are complex-linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DegenerateCalibrationError(ValueError):
    """Calibration data carry no information (e.g. all zeros)."""


# --------------------------------------------------------------------------
# Fourier transforms


def fft1d_centered(v, axis=-1):
    v = np.asarray(v)
    if v.shape[axis] < 1:
        raise ValueError("empty input")
    tmp = np.fft.ifftshift(v, axes=axis)
    tmp = np.fft.fft(tmp, axis=axis, norm="ortho")
    return np.fft.fftshift(tmp, axes=axis)


def ifft1d_centered(v, axis=-1):
    v = np.asarray(v)
    if v.shape[axis] < 1:
        raise ValueError("empty input")
    tmp = np.fft.ifftshift(v, axes=axis)
    tmp = np.fft.ifft(tmp, axis=axis, norm="ortho")
    return np.fft.fftshift(tmp, axes=axis)


def fft2d_centered(X, axes=(0, 1)):
    """Unitary centered 2D FFT over ``axes``; applied per coil for M x N x J input."""
    tmp = np.fft.ifftshift(X, axes=axes)
    tmp = np.fft.fft2(tmp, axes=axes, norm="ortho")
    return np.fft.fftshift(tmp, axes=axes)


def ifft2d_centered(X, axes=(0, 1)):
    tmp = np.fft.ifftshift(X, axes=axes)
    tmp = np.fft.ifft2(tmp, axes=axes, norm="ortho")
    return np.fft.fftshift(tmp, axes=axes)


# --------------------------------------------------------------------------
# Hankel primitives


def hankel_lift(v, p):
    """Lift the last axis of ``v`` (length N) to a ``p x (N - p + 1)`` Hankel matrix.

    ``out[..., i, j] = v[..., i + j]``. Leading axes are treated as a batch.
    """
    v = np.asarray(v)
    n = v.shape[-1]
    if not 1 <= p <= n:
        raise ValueError(f"pencil must satisfy 1 <= p <= {n}, got {p}")
    win = sliding_window_view(v, p, axis=-1)  # (..., K, p)
    return np.swapaxes(win, -1, -2).copy()


def hankel_adjoint(M, N):
    """Anti-diagonal sums of ``p x (N - p + 1)`` matrices, batched over leading axes."""
    M = np.asarray(M)
    p, k = M.shape[-2:]
    if p < 1 or p + k - 1 != N:
        raise ValueError(f"matrix of shape {p}x{k} is not a Hankel lift of length {N}")
    out = np.zeros(M.shape[:-2] + (N,), dtype=np.result_type(M.dtype, np.complex128))
    for i in range(p):
        out[..., i : i + k] += M[..., i, :]
    return out


def hankel_counts(N, p):
    """Number of Hankel entries holding each sample; the diagonal of ``H* H``."""
    n = np.arange(N)
    return np.minimum.reduce([n + 1, np.full(N, p), np.full(N, N - p + 1), N - n]).astype(float)


def default_pencil(n):
    return 23 if n >= 64 else ceil(n / 3) + 1


def hankel_dims(M, N, J, p, vc=False):
    """Lifted-matrix sizes for an ``M x N x J`` dataset with pencil ``p``.

    Returns ``(separable_rows, separable_cols, block_rows, block_cols)`` where
    the separable pair is the per-row matrix and the block pair is the
    conventional 2D block-Hankel matrix.
    """
    c = 2 if vc else 1
    return p, c * J * (N - p + 1), p * p * J, (M - p + 1) * (N - p + 1)


def weights_from_filter(taps, N):
    """Unnormalized DFT of zero-padded ``taps`` in natural (DC-first) order."""
    taps = np.asarray(taps, dtype=complex).ravel()
    if taps.size == 0:
        raise ValueError("filter_taps must be nonempty")
    if taps.size > N:
        raise ValueError(f"{taps.size} taps do not fit in length {N}")
    padded = np.zeros(N, dtype=complex)
    padded[: taps.size] = taps
    return np.fft.fft(padded)


def centered_weights(taps, N):
    """Filter weights aligned with the centered FFT (DC at ``N // 2``)."""
    return np.fft.fftshift(weights_from_filter(taps, N))


def virtual_coil_dagger(v, axis=-1):
    """Conjugate and reverse along ``axis``: ``out[n] = conj(v[N - 1 - n])``."""
    v = np.asarray(v)
    if v.shape[axis] < 1:
        raise ValueError("empty input")
    return np.conj(np.flip(v, axis=axis))


# --------------------------------------------------------------------------
# Lifting operators


@dataclass(frozen=True)
class HankelConfig:
    """Parameters of the lifted low-rank terms.

    ``pencil=None`` picks :func:`default_pencil` per signal length.
    ``pencil_param`` sets the pencil of the parameter-direction lifting in
    parameter imaging (same default rule when ``None``).
    """

    pencil: int | None = None
    filter_taps: tuple = (1.0, -1.0)
    virtual_coil: bool = False
    pencil_param: int | None = None

    def __post_init__(self):
        if len(self.filter_taps) == 0:
            raise ValueError("filter_taps must be nonempty")
        if self.pencil is not None and self.pencil < 1:
            raise ValueError("pencil must be >= 1")
        if self.pencil_param is not None and self.pencil_param < 1:
            raise ValueError("pencil_param must be >= 1")

    def pencil_for(self, n):
        p = self.pencil if self.pencil is not None else default_pencil(n)
        return min(p, n)

    def param_pencil_for(self, n):
        p = self.pencil_param if self.pencil_param is not None else default_pencil(n)
        return min(p, n)


@dataclass(frozen=True)
class Lifting:
    """Lift every 1D line of a 3D tensor along ``axis`` (0 or 1).

    Each line ``x`` of coil ``j`` becomes ``H(w * F x)`` (``transform``) or
    ``H(w * x)``; the batch index runs over the other spatial axis.
    """

    axis: int
    length: int
    pencil: int
    weights: np.ndarray | None = field(default=None, compare=False)
    transform: bool = True
    vc: bool = False

    def __post_init__(self):
        if self.axis not in (0, 1):
            raise ValueError("axis must be 0 or 1")
        if not 1 <= self.pencil <= self.length:
            raise ValueError(f"pencil {self.pencil} out of range for length {self.length}")

    @property
    def width(self):
        return self.length - self.pencil + 1

    def matrix_shape(self, n_coils):
        c = 2 if self.vc else 1
        return self.pencil, c * n_coils * self.width

    def forward(self, X):
        """Lift all lines: returns ``(B, p, c*J*K)``."""
        X = np.asarray(X)
        if X.shape[self.axis] != self.length:
            raise ValueError(f"axis {self.axis} has length {X.shape[self.axis]}, expected {self.length}")
        V = np.moveaxis(X, self.axis, -1)  # (B, J, n)
        if self.transform:
            V = fft1d_centered(V, axis=-1)
        if self.weights is not None:
            V = V * self.weights
        if self.vc:
            V = np.concatenate([V, virtual_coil_dagger(V, axis=-1)], axis=1)
        H = hankel_lift(V, self.pencil)  # (B, cJ, p, K)
        B, cJ, p, K = H.shape
        return H.transpose(0, 2, 1, 3).reshape(B, p, cJ * K)

    def adjoint(self, Z, shape):
        """Adjoint of :meth:`forward` (real inner product) into a tensor of ``shape``."""
        Z = np.asarray(Z)
        J = shape[2]
        c = 2 if self.vc else 1
        B = shape[1 - self.axis]
        p, K = self.pencil, self.width
        if Z.shape != (B, p, c * J * K):
            raise ValueError(f"lifted stack has shape {Z.shape}, expected {(B, p, c * J * K)}")
        H = Z.reshape(B, p, c * J, K).transpose(0, 2, 1, 3)
        V = hankel_adjoint(H, self.length)  # (B, cJ, n)
        if self.vc:
            V = V[:, :J] + virtual_coil_dagger(V[:, J:], axis=-1)
        if self.weights is not None:
            V = V * np.conj(self.weights)
        if self.transform:
            V = ifft1d_centered(V, axis=-1)
        return np.moveaxis(V, -1, self.axis)

    def gram_diagonal(self):
        """Diagonal of ``L* L`` in the domain where ``L`` acts pointwise.

        That domain is the 1D spectrum along ``axis`` when ``transform`` is
        set and the signal itself otherwise.
        """
        c = hankel_counts(self.length, self.pencil)
        if self.vc:
            c = c + c[::-1]
        if self.weights is not None:
            c = c * np.abs(self.weights) ** 2
        return c


def row_lifting(shape, cfg):
    """Lifting of the rows ``P_m X`` (lines along axis 1) of an M x N x J image."""
    n = shape[1]
    return Lifting(1, n, cfg.pencil_for(n), centered_weights(cfg.filter_taps, n), True, cfg.virtual_coil)


def col_lifting(shape, cfg):
    """Lifting of the columns ``Q_n X`` (lines along axis 0)."""
    m = shape[0]
    return Lifting(0, m, cfg.pencil_for(m), centered_weights(cfg.filter_taps, m), True, cfg.virtual_coil)


def lift_rows(X, m, cfg):
    X = np.asarray(X)
    if not 0 <= m < X.shape[0]:
        raise IndexError(f"row {m} out of range for {X.shape[0]} rows")
    return row_lifting(X.shape, cfg).forward(X[m : m + 1])[0]


def lift_cols(X, n, cfg):
    X = np.asarray(X)
    if not 0 <= n < X.shape[1]:
        raise IndexError(f"column {n} out of range for {X.shape[1]} columns")
    return col_lifting(X.shape, cfg).forward(X[:, n : n + 1])[0]


def adjoint_lift_rows(Mtx, m, shape, cfg):
    """Adjoint of :func:`lift_rows`; the result is zero outside row ``m``."""
    if not 0 <= m < shape[0]:
        raise IndexError(f"row {m} out of range for {shape[0]} rows")
    out = np.zeros(shape, dtype=complex)
    out[m : m + 1] = row_lifting(shape, cfg).adjoint(np.asarray(Mtx)[None], (1,) + tuple(shape[1:]))
    return out


def adjoint_lift_cols(Mtx, n, shape, cfg):
    if not 0 <= n < shape[1]:
        raise IndexError(f"column {n} out of range for {shape[1]} columns")
    out = np.zeros(shape, dtype=complex)
    out[:, n : n + 1] = col_lifting(shape, cfg).adjoint(np.asarray(Mtx)[None], (shape[0], 1, shape[2]))
    return out


# --------------------------------------------------------------------------
# SPIRiT


@dataclass
class SpiritKernels:
    """k-space interpolation kernels, ``weights[u, v, i, j]``.

    Output coil ``i`` at k-space location ``x`` receives
    ``weights[u, v, i, j] * K[x - (u - h, v - h), j]`` with ``h = k // 2``.
    """

    kernel_size: int
    weights: np.ndarray

    def __post_init__(self):
        k = self.kernel_size
        if k < 1 or k % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {k}")
        self.weights = np.asarray(self.weights, dtype=complex)
        if self.weights.ndim != 4 or self.weights.shape[:2] != (k, k) or self.weights.shape[2] != self.weights.shape[3]:
            raise ValueError(f"weights must be k x k x J x J, got {self.weights.shape}")
        h = k // 2
        if np.any(np.diagonal(self.weights[h, h]) != 0):
            raise ValueError("self-coil center taps must be zero")

    @property
    def n_coils(self):
        return self.weights.shape[2]


def spirit_calibrate(acs, kernel_size=5, tikhonov=1e-4):
    """Fit SPIRiT kernels on a fully sampled calibration block ``a x b x J``.

    Each point is regressed on its ``k x k x J`` neighbourhood minus its own
    value. The ridge weight is ``(tikhonov * s_max)**2`` where ``s_max`` is the
    largest singular value of the calibration matrix.
    """
    acs = np.asarray(acs, dtype=complex)
    if acs.ndim != 3:
        raise ValueError(f"acs must be a x b x J, got shape {acs.shape}")
    k = kernel_size
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel_size must be odd, got {k}")
    a, b, J = acs.shape
    if a <= k or b <= k:
        raise ValueError(f"calibration block {a}x{b} too small for kernel size {k}")
    if not np.any(acs):
        raise DegenerateCalibrationError("calibration data are all zero")
    h = k // 2
    win = sliding_window_view(acs, (k, k), axis=(0, 1))  # (a-k+1, b-k+1, J, k, k)
    A = win.reshape(-1, J * k * k)
    s_max = np.linalg.norm(A, 2)
    if s_max == 0:
        raise DegenerateCalibrationError("calibration matrix is zero")
    damp = (tikhonov * s_max) ** 2
    weights = np.zeros((k, k, J, J), dtype=complex)
    centre = h * k + h
    for i in range(J):
        drop = i * k * k + centre
        keep = np.r_[0:drop, drop + 1 : J * k * k]
        Ai = A[:, keep]
        target = win[:, :, i, h, h].ravel()
        u, s, vh = np.linalg.svd(Ai, full_matrices=False)
        if damp > 0:
            filt = s / (s**2 + damp)
        else:
            filt = np.where(s > s[0] * max(Ai.shape) * np.finfo(float).eps, 1.0 / np.where(s > 0, s, 1), 0.0)
        coef = vh.conj().T @ (filt * (u.conj().T @ target))
        full = np.zeros(J * k * k, dtype=complex)
        full[keep] = coef
        # window index s corresponds to offset u = h - s
        weights[:, :, i, :] = full.reshape(J, k, k)[:, ::-1, ::-1].transpose(1, 2, 0)
    return SpiritKernels(k, weights)


def spirit_maps(g, M, N):
    """Image-domain coil-mixing maps ``M x N x J x J`` equivalent to k-space convolution."""
    k = g.kernel_size
    if k > M or k > N:
        raise ValueError(f"kernel size {k} exceeds image {M}x{N}")
    h = k // 2
    pad = np.zeros((M, N) + g.weights.shape[2:], dtype=complex)
    cm, cn = M // 2, N // 2
    rows = (np.arange(k) - h + cm) % M
    cols = (np.arange(k) - h + cn) % N
    pad[np.ix_(rows, cols)] = g.weights
    return np.sqrt(M * N) * ifft2d_centered(pad, axes=(0, 1))


def _apply_maps(maps, X):
    return np.einsum("mnij,mnj->mni", maps, X)


def _apply_maps_adjoint(maps, X):
    return np.einsum("mnij,mni->mnj", maps.conj(), X)


def spirit_apply(g, X, maps=None):
    """Apply the image-domain SPIRiT operator ``G`` to an M x N x J image."""
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[2] != g.n_coils:
        raise ValueError(f"image shape {X.shape} does not match {g.n_coils} calibrated coils")
    if maps is None:
        maps = spirit_maps(g, X.shape[0], X.shape[1])
    return _apply_maps(maps, X)


def spirit_adjoint(g, X, maps=None):
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[2] != g.n_coils:
        raise ValueError(f"image shape {X.shape} does not match {g.n_coils} calibrated coils")
    if maps is None:
        maps = spirit_maps(g, X.shape[0], X.shape[1])
    return _apply_maps_adjoint(maps, X)


def spirit_gram_maps(maps):
    """Per-pixel J x J matrices of ``(G - I)* (G - I)``."""
    J = maps.shape[-1]
    E = maps - np.eye(J)
    return np.einsum("mnij,mnik->mnjk", E.conj(), E)


# --------------------------------------------------------------------------
# Normal operator of the image update


def _mask2d(mask, shape2):
    bits = np.asarray(mask, dtype=float)
    if bits.ndim == 1:
        bits = np.broadcast_to(bits[None, :], shape2)
    if bits.shape != tuple(shape2):
        raise ValueError(f"mask shape {bits.shape} does not match data {tuple(shape2)}")
    return bits


def kspace_diagonal(shape, mask, cfg, lam, beta):
    """Diagonal (in 2D k-space) of the data and lifted terms of the normal operator."""
    d_rows = row_lifting(shape, cfg).gram_diagonal()
    d_cols = col_lifting(shape, cfg).gram_diagonal()
    U = _mask2d(mask, shape[:2])
    return lam * U + beta * (d_cols[:, None] + d_rows[None, :])


def normal_apply(X, mask, g, cfg, lam, lam1, beta, maps=None):
    """Apply the image-update normal operator without forming it.

    ``lam F*U*UF + beta sum_m P_m* L* L P_m + beta sum_n Q_n* L* L Q_n
    + lam1 (G - I)*(G - I)``. The lifted Gram terms are diagonal in 2D k-space.
    """
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError(f"expected M x N x J image, got shape {X.shape}")
    diag = kspace_diagonal(X.shape, mask, cfg, lam, beta)
    out = ifft2d_centered(diag[:, :, None] * fft2d_centered(X))
    if g is not None and lam1 != 0:
        if g.n_coils != X.shape[2]:
            raise ValueError(f"kernels have {g.n_coils} coils, image has {X.shape[2]}")
        if maps is None:
            maps = spirit_maps(g, X.shape[0], X.shape[1])
        R = _apply_maps(maps, X) - X
        out = out + lam1 * (_apply_maps_adjoint(maps, R) - R)
    return out
