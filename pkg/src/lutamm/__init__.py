"""LUT-based approximate matrix multiplication toolkit.

Core pieces: a product-quantized GEMM library (`vq`), a multistage trainer
that converts dense toy networks to lookup networks (`trainer`), analytical
dataflow memory models and a functional lookup-stationary executor
(`dataflow`), a cycle-accurate accelerator simulator (`simulator`), and an
analytical co-design search engine (`dse`). The `lutamm` CLI ties them
together.
"""

from .errors import (
    ConfigurationError,
    CorruptionError,
    FunctionalMismatch,
    InvalidInputError,
    SimulationDeadlock,
    TrainingDiverged,
)
from .metrics import DistPrecision, LutPrecision, SimilarityMetric, distance
from .kmeans import kmeans_fit
from .vq import (
    AmmError,
    Codebook,
    ProblemShape,
    PSumTable,
    VQConfig,
    amm_error,
    build_lut,
    encode,
    exact_gemm,
    fit_codebook,
    lut_gemm,
    nchw_to_gemm,
    partition,
)

__version__ = "0.1.0"
