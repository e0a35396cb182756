"""guardmerge: checkpoint merging operators with a bandit-driven merge search.

Library surface:

* :mod:`guardmerge.tensor_store` — the ``GMRG1`` checkpoint container.
* :mod:`guardmerge.param_groups` — merge types and tensor-name grouping.
* :mod:`guardmerge.merge_algos` — soup / TIES / DARE / SLERP operators.
* :mod:`guardmerge.merge_search` — Thompson / epsilon-greedy / random search.
* :mod:`guardmerge.toy_eval` — desk-scale classifiers, losses, evaluators.
* :mod:`guardmerge.sdg` — policy schema and synthetic-data utilities.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .merge_algos import MergeSpec, TaskVector, apply_merge
from .merge_search import BanditState, SearchConfig, SearchResult, run_search
from .param_groups import GroupRules, MergeType, classify, select_params
from .sdg import CountAllocation, Policy, Sample, allocate_counts
from .tensor_store import (
    CompatReport,
    TensorMap,
    load_checkpoint,
    save_checkpoint,
    subset,
    validate_compat,
)
from .toy_eval import Dataset, LossWeights, TaskSpec, f1_score, make_synthetic_task

__all__ = [
    "BanditState",
    "CompatReport",
    "CountAllocation",
    "Dataset",
    "GroupRules",
    "LossWeights",
    "MergeSpec",
    "MergeType",
    "Policy",
    "Sample",
    "SearchConfig",
    "SearchResult",
    "TaskSpec",
    "TaskVector",
    "TensorMap",
    "allocate_counts",
    "apply_merge",
    "classify",
    "f1_score",
    "load_checkpoint",
    "make_synthetic_task",
    "run_search",
    "save_checkpoint",
    "select_params",
    "subset",
    "validate_compat",
]
