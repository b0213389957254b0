"""Separable low-rank Hankel regularized MRI reconstruction."""

from shlr.tensor_io import coil_compress, read_cplx, ssos, write_cplx
from shlr.operators import (
    HankelConfig,
    SpiritKernels,
    lift_cols,
    lift_rows,
    fft1d_centered,
    fft2d_centered,
    hankel_adjoint,
    hankel_dims,
    hankel_lift,
    ifft1d_centered,
    ifft2d_centered,
    normal_apply,
    spirit_apply,
    spirit_calibrate,
)
from shlr.sampling import (
    SamplingMask,
    apply_partial_fourier,
    find_acs_region,
    mask_gauss_cartesian,
    mask_random2d,
    mask_uniform,
    mask_uniform_pep,
)
from shlr.solvers import (
    AdmmConfig,
    DivergenceError,
    cg_solve,
    shlr_param_reconstruct_slice,
    shlr_pi_reconstruct,
    svt,
)
from shlr.metrics import MetricReport, evaluate, mssim, rlne
from shlr.parammap import ParameterDataset, T2Map, fit_t2, recon_param_dataset, t2_map
from shlr.synth import PhantomSpec, Shape, default_shapes, gen_pi_phantom, gen_sensitivities, gen_t2_phantom

__version__ = "0.1.0"
