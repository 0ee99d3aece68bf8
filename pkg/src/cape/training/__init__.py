from .losses import LossWeights, loss_edge, loss_gan, loss_kl, loss_recon, loss_total
from .loop import ABLATIONS, NumericAbort, TrainConfig, Trainer, lr_schedule
from .metrics import error_summary, eval_aligned_mse, per_vertex_errors
from .pca import PCACodec, pca_baseline

__all__ = [
    "LossWeights", "loss_recon", "loss_edge", "loss_kl", "loss_gan", "loss_total",
    "ABLATIONS", "NumericAbort", "TrainConfig", "Trainer", "lr_schedule",
    "error_summary", "eval_aligned_mse", "per_vertex_errors", "PCACodec", "pca_baseline",
]
