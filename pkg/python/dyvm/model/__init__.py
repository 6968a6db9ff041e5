from .config import PRESETS
from .config import ModelConfig
from .config import config_from_mapping
from .config import load_config
from .config import resolve_config
from .config import stage_keep_count
from .context import ForwardDiagnostics
from .layer import DirectionWeights
from .layer import VimLayer
from .layer import causal_conv1d
from .layer import layer_forward
from .vim import baseline_forward
from .vim import embed
from .vim import insert_class_token
from .vim import model_forward
from .vim import patchify
from .vim import remove_class_token
from .vim import teacher_forward
from .weights import ModelWeights
from .weights import init_weights
from .weights import load_weights
from .weights import predictor_in_dim
from .weights import save_weights

__all__ = (
    "baseline_forward",
    "causal_conv1d",
    "config_from_mapping",
    "DirectionWeights",
    "embed",
    "ForwardDiagnostics",
    "init_weights",
    "insert_class_token",
    "layer_forward",
    "load_config",
    "load_weights",
    "model_forward",
    "ModelConfig",
    "ModelWeights",
    "patchify",
    "predictor_in_dim",
    "PRESETS",
    "remove_class_token",
    "resolve_config",
    "save_weights",
    "stage_keep_count",
    "teacher_forward",
    "VimLayer",
)
