"""Fast, sparse and parallel coupled matrix-tensor factorization by sampling."""
from .als import NumericalError, SolverOptions, cmtf_als, init_coupled_factor, objective, parafac_als
from .driver import RunReport, TurboOptions, turbo_cmtf
from .factors import FactorSet, reconstruct
from .linalg import PinvOptions, ls_solve, pinv, stacked_kr_pinv_apply
from .merge import average_lambdas, merge, normalize_common
from .metrics import leave_two_out, predict_from_side, relative_cost, relative_sparsity, snr
from .missing import WeightMask, cmtf_wals, scalar_wls, weighted_objective, wls_factor
from .sampling import SampleSpec, SamplingOptions, density_profile, extract
from .tensor import CoupledData, Tensor3, frobenius_norm_sq, hadamard, khatri_rao, refold, unfold

__version__ = "0.1.0"
