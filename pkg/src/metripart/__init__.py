"""Learned stochastic particle dynamics with metriplectic structure."""

from .analysis import CorrelationCurve, d2min, l2_rel_error, msd, rdf, shear_profile, vacf
from .datagen import gen_dpd_gas, gen_from_model, random_model_state
from .dpd import DpdCalibrationConfig, DpdParams, dpd_calibrate, dpd_step
from .dynamics import step, total_energy, verify_structure
from .geometry import Box, PairSet, ParticleSystem, build_pairs, minimum_image, wrap_and_advect_boundary
from .io import RunConfig, load_config, parse_config, read_dump, write_dump
from .model import ModelParams, init_params, load_checkpoint, save_checkpoint, zero_params
from .training import TrainConfig, nll, predict_distribution, rollout, train
from .trajectory import Trajectory

__version__ = "0.1.0"
