"""Desk-scale GAN with dense networks and hand-written backpropagation."""

from .config import GanConfig, LatentPrior, Regime, ScMode
from .losses import gan_losses
from .metrics import (count_flips, dif, dif_batch, mode_collapse_report, probe_latents, prop_correct,
                      score_combos)
from .nets import Adam, DenseNet, SGD
from .train import (TrainingDiverged, TrainLog, TrainRun, load_checkpoint, save_checkpoint, sc_filter,
                    train)

__all__ = [
    "Adam", "DenseNet", "GanConfig", "LatentPrior", "Regime", "SGD", "ScMode", "TrainLog", "TrainRun",
    "TrainingDiverged", "count_flips", "dif", "dif_batch", "gan_losses", "load_checkpoint",
    "mode_collapse_report", "probe_latents", "prop_correct", "save_checkpoint", "sc_filter",
    "score_combos", "train",
]
