"""Complex tensor file format, coil combination and coil compression.

The ``.cplx`` layout is::

    b"CPLX0001"          magic
    u8                   precision code (0 = float32 pairs, 1 = float64 pairs)
    u32                  ndim
    ndim x u64           dims
    payload              interleaved (re, im), row-major, little-endian
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"CPLX0001"
_HEADER = struct.Struct("<BI")
_MAX_ENTRIES = 1 << 40


class CplxFormatError(ValueError):
    """Base class for malformed ``.cplx`` files."""


class BadMagicError(CplxFormatError):
    pass


class TruncatedFileError(CplxFormatError):
    pass


class DimOverflowError(CplxFormatError):
    pass


def write_cplx(t, path, precision=64):
    """Write a complex tensor to ``path``.

    Parameters
    ----------
    t : array_like
        Tensor with at least one dimension; real input is stored with zero
        imaginary part.
    path : str or os.PathLike
    precision : {32, 64}
        Bits per real component.
    """
    arr = np.asarray(t)
    if arr.ndim == 0 or any(d < 1 for d in arr.shape):
        raise ValueError(f"tensor must have ndim >= 1 and all dims >= 1, got shape {arr.shape}")
    if precision == 64:
        code, dtype = 1, np.dtype("<c16")
    elif precision == 32:
        code, dtype = 0, np.dtype("<c8")
    else:
        raise ValueError(f"precision must be 32 or 64, got {precision}")
    payload = np.ascontiguousarray(arr, dtype=dtype)
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(_HEADER.pack(code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(payload.tobytes(order="C"))
    except OSError as exc:
        raise OSError(f"cannot write {os.fspath(path)!r}: {exc}") from exc


def read_cplx(path):
    """Read a tensor written by :func:`write_cplx` as ``complex128``."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {os.fspath(path)!r}: {exc}") from exc

    if raw[:8] != MAGIC:
        raise BadMagicError(f"{os.fspath(path)!r}: bad magic {raw[:8]!r}")
    pos = 8
    if len(raw) < pos + _HEADER.size:
        raise TruncatedFileError(f"{os.fspath(path)!r}: truncated header")
    code, ndim = _HEADER.unpack_from(raw, pos)
    pos += _HEADER.size
    if code not in (0, 1):
        raise CplxFormatError(f"{os.fspath(path)!r}: unknown precision code {code}")
    if ndim < 1 or ndim > 32:
        raise DimOverflowError(f"{os.fspath(path)!r}: implausible ndim {ndim}")
    if len(raw) < pos + 8 * ndim:
        raise TruncatedFileError(f"{os.fspath(path)!r}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", raw, pos)
    pos += 8 * ndim
    count = 1
    for d in dims:
        if d < 1:
            raise CplxFormatError(f"{os.fspath(path)!r}: zero dimension in {dims}")
        count *= d
        if count > _MAX_ENTRIES:
            raise DimOverflowError(f"{os.fspath(path)!r}: dims {dims} overflow")
    dtype = np.dtype("<c16") if code == 1 else np.dtype("<c8")
    need = count * dtype.itemsize
    if len(raw) - pos < need:
        raise TruncatedFileError(
            f"{os.fspath(path)!r}: payload has {len(raw) - pos} bytes, expected {need}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return data.astype(np.complex128).reshape(dims)


def ssos(X):
    """Square root of sum of squares over the last (coil) axis of an M x N x J tensor."""
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError(f"ssos expects an M x N x J tensor, got shape {X.shape}")
    return np.sqrt(np.sum(np.abs(X) ** 2, axis=-1))


def coil_compress(K, n_virtual, return_energy=False):
    """Compress J coils to ``n_virtual`` virtual coils with a global SVD.

    The data are flattened to (M*N) x J and projected onto the leading
    ``n_virtual`` right singular vectors.

    Returns
    -------
    Kc : ndarray, M x N x n_virtual
    energy : float
        Only when ``return_energy``; fraction of squared singular values kept.
    """
    K = np.asarray(K)
    if K.ndim != 3:
        raise ValueError(f"coil_compress expects M x N x J data, got shape {K.shape}")
    J = K.shape[-1]
    if not 1 <= n_virtual <= J:
        raise ValueError(f"n_virtual must be in [1, {J}], got {n_virtual}")
    A = K.reshape(-1, J)
    _, s, vh = np.linalg.svd(A, full_matrices=False)
    V = vh[:n_virtual].conj().T
    out = (A @ V).reshape(K.shape[:-1] + (n_virtual,))
    if return_energy:
        total = float(np.sum(s**2))
        energy = float(np.sum(s[:n_virtual] ** 2)) / total if total > 0 else 1.0
        return out, energy
    return out
