"""Black-box L-infinity adversarial search over the vertices of the perturbation box."""

from vertexfuzz.attacks import (
    EXHAUSTED,
    FOUND,
    MAX_ITERATIONS,
    AttackConfig,
    AttackOutcome,
    attack,
    ds_binary,
    ds_hierarchy,
    ds_multiclass,
    ds_multiclass_alt,
    ds_refinement,
    make_oracle,
    random_fuzz_baseline,
)
from vertexfuzz.backends import FeedForwardModel, Layer, LinearModel, load_model, save_model
from vertexfuzz.core import (
    BudgetExhausted,
    InputVector,
    QueryLedger,
    ScoreOracle,
    SearchRegion,
    l2_distance,
    linf_distance,
    make_region,
    predict_label,
)

__version__ = "0.1.0"
