from .mask import IndexArray
from .mask import TokenMask
from .mask import is_consecutive
from .predictor import PRUNE
from .predictor import RETAIN
from .predictor import PredictorWeights
from .predictor import PrunePrediction
from .predictor import predict
from .rearrange import invert_permutation
from .rearrange import middle
from .rearrange import rearrange
from .rearrange import rearrange_permutation
from .sampling import SampleMode
from .sampling import sample_mask
from .strategies import LabSsm
from .strategies import Strategy
from .strategies import at_retained
from .strategies import ha_retained
from .strategies import plain_train_retained
from .strategies import prune_infer
from .strategies import prune_infer_ha
from .strategies import prune_train_dyvm
from .strategies import prune_train_plain

__all__ = (
    "at_retained",
    "ha_retained",
    "IndexArray",
    "invert_permutation",
    "is_consecutive",
    "LabSsm",
    "middle",
    "plain_train_retained",
    "predict",
    "PredictorWeights",
    "PRUNE",
    "prune_infer",
    "prune_infer_ha",
    "prune_train_dyvm",
    "prune_train_plain",
    "PrunePrediction",
    "rearrange",
    "rearrange_permutation",
    "RETAIN",
    "sample_mask",
    "SampleMode",
    "Strategy",
    "TokenMask",
)
