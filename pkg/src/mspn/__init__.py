"""Multi-scale predictive coding network for future frame prediction."""
from .cell import CellState, CodeFusion, EDLSTMCell
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, DataConfig, TrainConfig, load_config
from .data import SequenceDataset, generate_moving_digits, ingest_directory, make_splits
from .discriminator import Discriminator
from .metrics import MetricReport, copy_last_frame, evaluate, psnr, ssim
from .network import MSPN, PREDICTED_FEEDBACK, TEACHER_FORCED, NetworkConfig
from .objectives import LossWeights, discriminator_loss, generator_adv_loss, pixel_loss, total_generator_loss
from .pyramid import DimensionError, build_pyramid, compute_error
from .trainer import Trainer, train

__version__ = "0.1.0"
