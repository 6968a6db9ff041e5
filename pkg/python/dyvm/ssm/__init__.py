from .adjoint import ScanGradients
from .adjoint import scan_backward
from .discretize import SMALL_DELTA_A
from .discretize import discretize
from .params import DiscreteSsm
from .params import Kernel
from .params import SsmParams
from .scan import build_kernel
from .scan import evolve
from .scan import scan_convolutional
from .scan import scan_recurrent
from .scan import scan_states

__all__ = (
    "build_kernel",
    "discretize",
    "DiscreteSsm",
    "evolve",
    "Kernel",
    "scan_backward",
    "scan_convolutional",
    "scan_recurrent",
    "scan_states",
    "ScanGradients",
    "SMALL_DELTA_A",
    "SsmParams",
)
