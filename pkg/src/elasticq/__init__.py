"""Elastic mixed-precision quantization toolkit.

Quantizes a toy decoder transformer at several bit-widths, searches for a
trajectory of hybrid module-precision configs with module-sized footprint
steps and shared storage, prunes intermediate precisions by usage, and
simulates elastic hosting under a fluctuating memory budget.
"""

__version__ = "0.1.0"

from .evaluate import (  # noqa: F401
    METRIC_LOGIT_DISTANCE,
    METRIC_PERPLEXITY,
    CalibrationSet,
    default_calibration,
    load_calibration,
    logit_distance,
    perplexity,
)
from .model import (  # noqa: F401
    Model,
    ModelConfig,
    ModelView,
    ModuleId,
    build_model,
    forward,
    list_modules,
)
from .pruning import (  # noqa: F401
    UsageRanking,
    prune_and_search,
    rank_mid_modules,
    storage_cost,
)
from .quantize import (  # noqa: F401
    ModelStore,
    QuantizedModel,
    QuantizedModule,
    config_footprint,
    dequantize_module,
    quantize_model,
    quantize_module,
)
from .runtime import (  # noqa: F401
    MemoryTrace,
    SimReport,
    granularity,
    select_config,
    simulate,
    transition_cost,
)
from .search import (  # noqa: F401
    Ensemble,
    EQMConfig,
    SearchParams,
    analysis_filter,
    candidate_generator,
    search_ensemble,
)
from .sensitivity import SensitivityTable, build_sensitivity_table  # noqa: F401
