from .consistency import ConsistencyReport  # noqa: D104
from .consistency import TrialResult
from .consistency import run_consistency
from .forward import ForwardReport
from .forward import random_images
from .forward import run_forward
from .gradcheck import GradcheckReport
from .gradcheck import GradRow
from .gradcheck import run_gradcheck

__all__ = (
    "ConsistencyReport",
    "ForwardReport",
    "GradcheckReport",
    "GradRow",
    "random_images",
    "run_consistency",
    "run_forward",
    "run_gradcheck",
    "TrialResult",
)
