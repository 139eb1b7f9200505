"""Limited-angle CT reconstruction with score-based diffusion and PDHG-TV data consistency."""
from .diffusion import (CountingScore, GaussianScore, GmmPrior, GmmScore, NoiseSchedule,
                        NoisyScore, OracleScore, ZeroScore, corrector_step, denoise_step,
                        dsm_loss, gmm_score, oracle_score, pc_sample, predictor_step, sigma_at)
from .fusion import (build_missing_wedge_mask, centered_dft2, fourier_fuse,
                     inverse_centered_dft2)
from .lact_io import read_lact, write_lact, write_png
from .metrics import (MetricsReport, evaluate, histogram_correlation, lbp_texture_similarity,
                      psnr, ssim)
from .pipeline import PsdmConfig, PsdmTrace, psdm_reconstruct
from .simulate import (UNIT_MAPS, NoiseModel, PhantomKind, PhantomSpec, UnitMap, make_phantom,
                       simulate_measurement)
from .tomo import (Beam, ScanGeometry, back_project, build_geometry, clinical_fan_geometry,
                   default_parallel_geometry, fbp, forward_project, operator_norm)
from .variational import PdhgParams, PdhgState, default_lambda, div, grad, pdhg_tv

__version__ = "0.1.0"
