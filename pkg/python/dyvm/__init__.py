# noqa: D104
from .block_select import BlockPolicy
from .block_select import PolicyRow
from .block_select import SelectorWeights
from .block_select import route_infer
from .block_select import select_blocks
from .environment import Environment
from .environment import register_standard_strategies
from .flops import FlopsConvention
from .flops import FlopsGrid
from .flops import FlopsReport
from .flops import count_evolution_ops
from .flops import count_flops
from .flops import sweep_ratios
from .losses import LossParts
from .losses import LossWeights
from .losses import TargetRatios
from .losses import loss_block
from .losses import loss_cls
from .losses import loss_dis_out
from .losses import loss_dis_token
from .losses import loss_joint
from .losses import loss_token
from .model import PRESETS
from .model import ForwardDiagnostics
from .model import ModelConfig
from .model import ModelWeights
from .model import init_weights
from .model import model_forward
from .model import teacher_forward
from .numerics import OpCounter
from .numerics import Rng
from .pruning import TokenMask
from .pruning import sample_mask
from .ssm import SsmParams
from .ssm import discretize
from .ssm import scan_backward
from .ssm import scan_recurrent

__version__ = "0.1.0"

__all__ = [
    "BlockPolicy",
    "count_evolution_ops",
    "count_flops",
    "discretize",
    "Environment",
    "FlopsConvention",
    "FlopsGrid",
    "FlopsReport",
    "ForwardDiagnostics",
    "init_weights",
    "loss_block",
    "loss_cls",
    "loss_dis_out",
    "loss_dis_token",
    "loss_joint",
    "loss_token",
    "LossParts",
    "LossWeights",
    "model_forward",
    "ModelConfig",
    "ModelWeights",
    "OpCounter",
    "PolicyRow",
    "PRESETS",
    "register_standard_strategies",
    "Rng",
    "route_infer",
    "sample_mask",
    "scan_backward",
    "scan_recurrent",
    "select_blocks",
    "SelectorWeights",
    "SsmParams",
    "sweep_ratios",
    "TargetRatios",
    "teacher_forward",
    "TokenMask",
]
