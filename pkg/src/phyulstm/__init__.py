"""Physics-informed causal U-Net + LSTM surrogate for seismic response of nonlinear oscillators."""
from .autodiff import Grid3, parameter
from .datasets import (GroundMotionRecord, Normalizer, RecordCollection, fit_normalizer,
                       generate_synthetic_dataset, load_records, save_records, split)
from .differentiator import FdMatrix, build_fd_matrix, differentiate, second_derivative
from .dynamics import OscillatorParams, StateTrajectory, generate_ground_motion, restoring_force, simulate_response
from .evaluation import EvalReport, evaluate_model, export_plot_data, pearson_r
from .losses import LossBreakdown, accel_only_loss, combined_loss, data_loss, datadriven_loss, physics_loss
from .training import (ModelConfig, PhyULSTM, TrainConfig, load_checkpoint, predict, save_checkpoint,
                       train)

__version__ = "0.1.0"
