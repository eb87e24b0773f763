"""Risk-controlling prediction sets calibrated on a single trajectory of a dynamical system."""
from .calibration import (BlockSchedule, CalibrationCertificate, calibrate_blocked,
                          calibrate_iid_standard, calibrate_weighted, certify, choose_blocks,
                          gamma_blocked, gamma_weighted, nu_lag)
from .config import ExperimentConfig
from .exceptions import BurnInError, ConfigError, NotContractiveError, RcpsError
from .harness import (RiskQuery, check_blocking_inequality, coverage_experiment,
                      estimate_beta_scalar, estimate_eta, eta_oracle, exact_risk_scalar,
                      gaussian_tv, mc_risk)
from .lti import (LtiSystem, MixingBound, StationaryCovariance, Trajectory, mixing_bound,
                  resolvent_sup_norm, simulate, solve_lyapunov, spectral_radius)
from .predictor import (LinearModel, LossSpec, NestedPredictor, WeightVector, empirical_risk,
                        residuals)

__version__ = "0.1.0"
