"""Model-based reinforcement learning with a latent world model, discrete
value regression, and sampling-based planning, self-contained on numpy."""

from .buffer import Episode, ReplayBuffer, TaskRecord, load_dataset, save_dataset
from .config import BufferConfig, Config, ConfigError, EnvConfig, load_config, serialize_config
from .envs import TaskSpec, discount_heuristic, make_env, task_names
from .losses import ValueScale, model_loss, policy_loss
from .model import ModelConfig, ModelTask, WorldModel
from .planner import PlannerConfig, PlanningError, PlanSolution, mppi_update, plan, score_trajectories
from .regression import BinSpec, symexp, symlog, two_hot_decode, two_hot_encode
from .trainer import (MetricsWriter, OnlineTrainer, TrainConfig, TrainingError,
                      evaluate, finetune, seed_steps_heuristic, train_offline_multitask)

__version__ = "0.1.0"
