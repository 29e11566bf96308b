"""Multi-task post-click conversion ranking with differentiable sorting.

Library layout:

* ``gradcore``    reverse-mode autodiff over dense 2-D tensors
* ``sortops``     permutations, the SoftSort relaxation, ranking losses
* ``aggregate``   prediction/label aggregation operators
* ``data``        dataset format, validation, batching, synthetic generator
* ``model``       shared-bottom multi-task network, baselines, training
* ``evaluation``  AUC and NDCG@k metrics
* ``checks``      gradient-check and property suite
* ``cli``         command-line interface (``mtlds`` entry point)
"""

from .aggregate import AggregatorSpec, LabelSequence, aggregate_labels, aggregate_predictions
from .data import Dataset, Impression, Sample, Schema, SynthConfig, load_dataset, synthesize
from .evaluation import MetricReport, auc, ndcg_at_k
from .gradcore import Graph, Tensor, grad_check
from .model import ModelConfig, SharedBottomModel, TrainReport, evaluate_model, fit
from .sortops import (
    Permutation,
    PermutationMatrix,
    URSMatrix,
    argsort_desc,
    is_unimodal_row_stochastic,
    perm_matrix,
    soft_sort,
    sort_loss,
)

__version__ = "0.1.0"

__all__ = [
    "AggregatorSpec",
    "Dataset",
    "Graph",
    "Impression",
    "LabelSequence",
    "MetricReport",
    "ModelConfig",
    "Permutation",
    "PermutationMatrix",
    "Sample",
    "Schema",
    "SharedBottomModel",
    "SynthConfig",
    "Tensor",
    "TrainReport",
    "URSMatrix",
    "aggregate_labels",
    "aggregate_predictions",
    "argsort_desc",
    "auc",
    "evaluate_model",
    "fit",
    "grad_check",
    "is_unimodal_row_stochastic",
    "load_dataset",
    "ndcg_at_k",
    "perm_matrix",
    "soft_sort",
    "sort_loss",
    "synthesize",
]
