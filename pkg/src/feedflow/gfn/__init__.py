"""Flow-network decision core: decision spaces, the flow model, losses with
analytic gradients, and the optimizer."""

from .network import Adam, Mlp
from .spaces import ActionSpace, DownloadLeaf, PauseLeaf, TableTree, VideoChoice
from .flow import (
    FlowArch,
    FlowModel,
    SampledTrajectory,
    StateBatch,
    TrajectoryBatch,
    backward_policy,
    consistent_tabular_model,
    db_residual,
    fm_gradient,
    fm_loss,
    forward_policy,
    gradient,
    load_checkpoint,
    make_state_batch,
    make_trajectory_batch,
    sample_candidates,
    sample_trajectory,
    save_checkpoint,
    tb_gradient,
    tb_loss,
    tb_losses,
    update,
)

__all__ = [
    "Adam",
    "Mlp",
    "ActionSpace",
    "DownloadLeaf",
    "PauseLeaf",
    "TableTree",
    "VideoChoice",
    "FlowArch",
    "FlowModel",
    "SampledTrajectory",
    "StateBatch",
    "TrajectoryBatch",
    "backward_policy",
    "consistent_tabular_model",
    "db_residual",
    "fm_gradient",
    "fm_loss",
    "forward_policy",
    "gradient",
    "load_checkpoint",
    "make_state_batch",
    "make_trajectory_batch",
    "sample_candidates",
    "sample_trajectory",
    "save_checkpoint",
    "tb_gradient",
    "tb_loss",
    "tb_losses",
    "update",
]
