"""Verified feature explanations for feed-forward ReLU classifiers.

Given a network and an input, compute a minimal set of features whose
complement tolerates bounded perturbation without changing the prediction,
certified by an in-package branch-and-bound verifier over sound output
bounds. Explanation size doubles as a detection score for incorrect
predictions and out-of-distribution inputs.
"""

from .bounds import (
    NUMERIC_TOL,
    Box,
    LinearBounds,
    OutputBounds,
    crown_bounds,
    crown_linear_bounds,
    epsilon_lower_bound,
    ibp_bounds,
    perturbation_box,
)
from .detect import (
    RocCurve,
    SampleScore,
    auroc,
    detection_summary,
    knn_classify,
    max_softmax,
    score_dataset,
)
from .explain import (
    ExplanationResult,
    ValidationReport,
    binary_partition,
    explain,
    explain_binary,
    explain_quickxplain,
    explain_sequential,
    quickxplain_partition,
    result_to_json,
    sequential_partition,
    split_half,
    validate_explanation,
    write_pgm_mask,
)
from .model import (
    DatasetError,
    Layer,
    Logits,
    ModelError,
    Network,
    Sample,
    infer,
    load_dataset,
    load_dataset_file,
    load_model,
    load_model_file,
    save_model,
    save_model_file,
)
from .traversal import (
    ORDER_METHODS,
    Traversal,
    compute_traversal,
    traversal_order_boundprop,
    traversal_order_heuristic,
    traversal_order_index,
)
from .verifier import (
    SAT,
    UNKNOWN,
    UNSAT,
    OracleStats,
    Outcome,
    PerturbationSpec,
    Query,
    check_valid,
    check_valid_regression,
    class_difference_network,
    confidence_ranking,
    solve,
)

__version__ = "0.1.0"
