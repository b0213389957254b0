"""Singular value thresholding, conjugate-residual solver and the ADMM drivers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from shlr.operators import (
    Lifting,
    _apply_maps,
    _apply_maps_adjoint,
    _mask2d,
    centered_weights,
    col_lifting,
    fft1d_centered,
    fft2d_centered,
    ifft1d_centered,
    ifft2d_centered,
    kspace_diagonal,
    row_lifting,
    spirit_maps,
)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when an iterate stops being finite."""


@dataclass(frozen=True)
class AdmmConfig:
    """ADMM settings shared by the parallel-imaging and parameter-imaging drivers.

    ``x_update`` selects how the image subproblem is solved: ``"cg"`` always
    iterates, ``"direct"`` divides by the k-space diagonal (only valid without
    the SPIRiT term) and ``"auto"`` picks direct whenever it is exact.
    ``normalize`` rescales the data so that the zero-filled image peaks at 1
    before solving; the output is scaled back.
    """

    lam: float = 1e4
    lam1: float = 1e2
    lam2: float = 2.0
    beta: float = 1.0
    tau: float = 1.0
    max_outer: int = 50
    tol: float = 1e-6
    cg_max: int = 15
    cg_tol: float = 1e-8
    enable_spirit: bool = False
    enable_vc: bool = False
    d_init: float = 1.0
    x_update: str = "auto"
    normalize: bool = True

    def __post_init__(self):
        if self.lam <= 0 or self.beta <= 0 or self.tau <= 0 or self.tol <= 0:
            raise ValueError("lam, beta, tau and tol must be positive")
        if self.lam1 < 0 or self.lam2 < 0:
            raise ValueError("lam1 and lam2 must be non-negative")
        if self.max_outer < 1 or self.cg_max < 1:
            raise ValueError("max_outer and cg_max must be >= 1")
        if self.x_update not in ("auto", "cg", "direct"):
            raise ValueError(f"x_update must be auto, cg or direct, got {self.x_update!r}")

    @classmethod
    def for_method(cls, method, **overrides):
        """Defaults for one of shlr, shlr-s, shlr-v, shlr-sv, shlr-p, shlr-vp."""
        flags = {
            "shlr": (False, False),
            "shlr-s": (True, False),
            "shlr-v": (False, True),
            "shlr-sv": (True, True),
            "shlr-p": (False, False),
            "shlr-vp": (False, True),
        }
        if method not in flags:
            raise ValueError(f"unknown method {method!r}")
        spirit, vc = flags[method]
        base = {"enable_spirit": spirit, "enable_vc": vc}
        if method in ("shlr-p", "shlr-vp"):
            base["max_outer"] = 100
        base.update(overrides)
        return cls(**base)


@dataclass
class CGInfo:
    iterations: int
    residual: float
    history: list = field(default_factory=list)


@dataclass
class AdmmInfo:
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def svt(M, tau):
    """Singular value soft-thresholding ``U max(S - tau, 0) V^H``.

    Works on a single matrix or a stack ``(..., p, q)``.
    """
    M = np.asarray(M)
    if M.size == 0:
        return M.copy()
    u, s, vh = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (u * s[..., None, :]) @ vh


def _inner(a, b):
    return float(np.real(np.vdot(a, b)))


def cg_solve(A, b, x0=None, max_iter=15, tol=1e-8, full_output=False):
    """Solve ``A x = b`` for a self-adjoint positive semi-definite operator.

    Uses the conjugate-residual recurrence of the conjugate gradient family,
    which minimises ``||A x - b||`` over the Krylov space so the residual
    never increases. Inner products are real (``Re <a, b>``), so operators that
    are only real-linear are handled as well.

    Parameters
    ----------
    A : callable
        ``A(x)`` returns an array shaped like ``x``.
    b : ndarray
    x0 : ndarray, optional
        Warm start; zeros when omitted.
    max_iter : int
    tol : float
        Stop once ``||A x - b|| <= tol * ||b||``.
    full_output : bool
        Also return a :class:`CGInfo`.
    """
    b = np.asarray(b)
    x = np.zeros_like(b, dtype=np.result_type(b, np.complex128)) if x0 is None else np.array(x0, dtype=np.result_type(x0, b, np.complex128))
    bnorm = np.linalg.norm(b)
    if not np.isfinite(bnorm):
        raise DivergenceError("right-hand side is not finite")
    r = b - A(x)
    rnorm = np.linalg.norm(r)
    if not np.isfinite(rnorm):
        raise DivergenceError("initial residual is not finite")
    history = [rnorm]
    it = 0
    if bnorm == 0:
        x = np.zeros_like(x)
        rnorm = 0.0
        history = [0.0]
    elif rnorm > tol * bnorm:
        Ar = A(r)
        p, Ap = r.copy(), Ar.copy()
        rAr = _inner(r, Ar)
        while it < max_iter:
            ApAp = _inner(Ap, Ap)
            if ApAp <= 0 or rAr <= 0:
                break
            alpha = rAr / ApAp
            x = x + alpha * p
            r = r - alpha * Ap
            it += 1
            rnorm = np.linalg.norm(r)
            if not np.isfinite(rnorm):
                raise DivergenceError(f"non-finite residual at iteration {it}")
            history.append(rnorm)
            if rnorm <= tol * bnorm or it == max_iter:
                break
            Ar = A(r)
            rAr_new = _inner(r, Ar)
            coef = rAr_new / rAr
            rAr = rAr_new
            p = r + coef * p
            Ap = Ar + coef * Ap
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite solution")
    rel = float(rnorm / bnorm) if bnorm > 0 else 0.0
    if full_output:
        return x, CGInfo(it, rel, [float(h) for h in history])
    return x


def _relative_change(new, old):
    den = np.vdot(old, old).real
    num = np.vdot(new - old, new - old).real
    return float(num / den) if den > 0 else np.inf


def _data_scale(image, normalize):
    if not normalize:
        return 1.0
    peak = float(np.max(np.abs(image))) if image.size else 0.0
    return peak if peak > 0 else 1.0


def _log_iter(history, k, change, cg_info):
    entry = {
        "iter": k,
        "rel_change": change,
        "cg_iters": cg_info.iterations if cg_info else 0,
        "cg_residual": cg_info.residual if cg_info else 0.0,
    }
    history.append(entry)
    log.info(" ".join(f"{key}={value:.6e}" if isinstance(value, float) else f"{key}={value}" for key, value in entry.items()))


def _check_finite(X, k):
    if not np.all(np.isfinite(X)):
        raise DivergenceError(f"non-finite image at outer iteration {k}")


def shlr_pi_reconstruct(Y, mask, g=None, hcfg=None, acfg=None, full_output=False):
    """Parallel-imaging reconstruction with SHLR / SHLR-S / SHLR-V / SHLR-SV.

    Parameters
    ----------
    Y : ndarray, M x N x J
        Zero-filled centred k-space.
    mask : SamplingMask or array_like
        ``M x N`` mask or a length-``N`` line mask.
    g : SpiritKernels, optional
        Required when ``acfg.enable_spirit``.
    hcfg : HankelConfig
        Its ``virtual_coil`` flag is overridden by ``acfg.enable_vc``.
    acfg : AdmmConfig

    Returns
    -------
    X : ndarray, M x N x J
        Multi-coil image estimate.
    info : AdmmInfo
        Only when ``full_output``.
    """
    from shlr.operators import HankelConfig

    hcfg = HankelConfig() if hcfg is None else hcfg
    acfg = AdmmConfig() if acfg is None else acfg
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 3:
        raise ValueError(f"Y must be M x N x J, got shape {Y.shape}")
    M, N, J = Y.shape
    U = _mask2d(mask, (M, N))
    spirit = acfg.enable_spirit and acfg.lam1 != 0
    if acfg.enable_spirit and g is None:
        raise ValueError("enable_spirit requires SPIRiT kernels")
    if spirit and g.n_coils != J:
        raise ValueError(f"kernels calibrated for {g.n_coils} coils, data have {J}")
    if acfg.x_update == "direct" and spirit:
        raise ValueError("direct image update is not available with the SPIRiT term")
    use_cg = acfg.x_update == "cg" or spirit

    hcfg = replace(hcfg, virtual_coil=acfg.enable_vc)
    rows, cols = row_lifting(Y.shape, hcfg), col_lifting(Y.shape, hcfg)
    lam, beta, tau = acfg.lam, acfg.beta, acfg.tau

    Yu = U[:, :, None] * Y
    X = ifft2d_centered(Yu)
    scale = _data_scale(X, acfg.normalize)
    Yu = Yu / scale
    X = X / scale

    diag = kspace_diagonal(Y.shape, U, hcfg, lam, beta)[:, :, None]
    inv_diag = np.divide(1.0, diag, out=np.zeros_like(diag), where=diag > 0)
    data_rhs = lam * ifft2d_centered(Yu)
    maps = spirit_maps(g, M, N) if spirit else None

    def normal(V):
        out = ifft2d_centered(diag * fft2d_centered(V))
        if spirit:
            R = _apply_maps(maps, V) - V
            out = out + acfg.lam1 * (_apply_maps_adjoint(maps, R) - R)
        return out

    Zr = np.zeros((M,) + rows.matrix_shape(J), dtype=complex)
    Zc = np.zeros((N,) + cols.matrix_shape(J), dtype=complex)
    Dr = np.full_like(Zr, acfg.d_init)
    Dc = np.full_like(Zc, acfg.d_init)

    history = []
    converged = False
    k = 0
    for k in range(1, acfg.max_outer + 1):
        rhs = data_rhs + beta * (rows.adjoint(Zr - Dr / beta, Y.shape) + cols.adjoint(Zc - Dc / beta, Y.shape))
        cg_info = None
        if use_cg:
            Xn, cg_info = cg_solve(normal, rhs, X, acfg.cg_max, acfg.cg_tol, full_output=True)
        else:
            Xn = ifft2d_centered(inv_diag * fft2d_centered(rhs))
        _check_finite(Xn, k)

        LXr = rows.forward(Xn)
        LXc = cols.forward(Xn)
        Zr = svt(LXr + Dr / beta, 1.0 / beta)
        Zc = svt(LXc + Dc / beta, 1.0 / beta)
        Dr = Dr + tau * (LXr - Zr)
        Dc = Dc + tau * (LXc - Zc)

        change = _relative_change(Xn, X)
        X = Xn
        _log_iter(history, k, change, cg_info)
        if change < acfg.tol:
            converged = True
            break

    X = X * scale
    if full_output:
        return X, AdmmInfo(k, converged, history)
    return X


def param_liftings(N, L, hcfg, vc):
    """PE-direction (weighted, Fourier, optional virtual coil) and parameter-direction liftings."""
    pe = Lifting(0, N, hcfg.pencil_for(N), centered_weights(hcfg.filter_taps, N), True, vc)
    par = Lifting(1, L, hcfg.param_pencil_for(L), None, False, False)
    return pe, par


def param_diagonal(U, pe, par, lam, beta):
    """Normal-operator diagonal in the (k_PE, echo) domain."""
    return lam * U + beta * (pe.gram_diagonal()[:, None] + par.gram_diagonal()[None, :])


def param_normal_apply(X, mask, hcfg, lam, beta, vc=False):
    """Image-update normal operator of the parameter-imaging model for one N x L x J slice."""
    X = np.asarray(X)
    N, L, _ = X.shape
    pe, par = param_liftings(N, L, hcfg, vc)
    diag = param_diagonal(_mask2d(mask, (N, L)), pe, par, lam, beta)
    return ifft1d_centered(diag[:, :, None] * fft1d_centered(X, axis=0), axis=0)


def shlr_param_reconstruct_slice(Y_m, mask, hcfg=None, acfg=None, full_output=False):
    """SHLR-P / SHLR-VP reconstruction of one PE-P plane.

    Parameters
    ----------
    Y_m : ndarray, N x L x J
        Data at one FE position: k-space along PE, zero-filled.
    mask : SamplingMask or array_like, N x L

    Returns
    -------
    X : ndarray, N x L x J
    info : AdmmInfo
        Only when ``full_output``.
    """
    from shlr.operators import HankelConfig

    hcfg = HankelConfig() if hcfg is None else hcfg
    acfg = AdmmConfig.for_method("shlr-p") if acfg is None else acfg
    Y_m = np.asarray(Y_m, dtype=complex)
    if Y_m.ndim != 3:
        raise ValueError(f"Y_m must be N x L x J, got shape {Y_m.shape}")
    N, L, J = Y_m.shape
    U = _mask2d(mask, (N, L))
    pe, par = param_liftings(N, L, hcfg, acfg.enable_vc)
    lam, beta, tau = acfg.lam, acfg.beta, acfg.tau

    Yu = U[:, :, None] * Y_m
    X = ifft1d_centered(Yu, axis=0)
    scale = _data_scale(X, acfg.normalize)
    Yu = Yu / scale
    X = X / scale

    diag = param_diagonal(U, pe, par, lam, beta)[:, :, None]
    inv_diag = np.divide(1.0, diag, out=np.zeros_like(diag), where=diag > 0)
    data_rhs = lam * ifft1d_centered(Yu, axis=0)

    def normal(V):
        return ifft1d_centered(diag * fft1d_centered(V, axis=0), axis=0)

    Zpe = np.zeros((L,) + pe.matrix_shape(J), dtype=complex)
    Zp = np.zeros((N,) + par.matrix_shape(J), dtype=complex)
    Dpe = np.full_like(Zpe, acfg.d_init)
    Dp = np.full_like(Zp, acfg.d_init)

    history = []
    converged = False
    k = 0
    for k in range(1, acfg.max_outer + 1):
        rhs = data_rhs + beta * (pe.adjoint(Zpe - Dpe / beta, Y_m.shape) + par.adjoint(Zp - Dp / beta, Y_m.shape))
        cg_info = None
        if acfg.x_update == "cg":
            Xn, cg_info = cg_solve(normal, rhs, X, acfg.cg_max, acfg.cg_tol, full_output=True)
        else:
            Xn = ifft1d_centered(inv_diag * fft1d_centered(rhs, axis=0), axis=0)
        _check_finite(Xn, k)

        LXpe = pe.forward(Xn)
        LXp = par.forward(Xn)
        Zpe = svt(LXpe + Dpe / beta, 1.0 / beta)
        Zp = svt(LXp + Dp / beta, acfg.lam2 / beta)
        Dpe = Dpe + tau * (LXpe - Zpe)
        Dp = Dp + tau * (LXp - Zp)

        change = _relative_change(Xn, X)
        X = Xn
        _log_iter(history, k, change, cg_info)
        if change < acfg.tol:
            converged = True
            break

    X = X * scale
    if full_output:
        return X, AdmmInfo(k, converged, history)
    return X
