"""Hierarchical Shapley saliency maps over data-aware image partition trees."""

from .explainer import BudgetPolicy, SaliencyMap, load_saliency, owen_values, save_saliency
from .games import CharacteristicGame, additive_game, from_function, from_table
from .hierarchy import (
    PartitionTree,
    RasterImage,
    build_aa,
    build_bpt,
    load_tree,
    region_distance,
    region_pixels,
    save_tree,
    tree_validate,
)
from .masking import Background, GroundTruth, MaskSpec, apply_mask, ideal_linear_game
from .metrics import ScoreReport, auc_curves, iou, iou_curve, score_report
from .oracle import (
    CoalitionStructure,
    enumerate_marginals,
    expected_eval_count,
    marginal,
    owen_hcs_recursive,
    owen_two_level,
    shapley_exact,
)

__version__ = "0.1.0"

__all__ = [
    "Background",
    "BudgetPolicy",
    "CharacteristicGame",
    "CoalitionStructure",
    "GroundTruth",
    "MaskSpec",
    "PartitionTree",
    "RasterImage",
    "SaliencyMap",
    "ScoreReport",
    "additive_game",
    "apply_mask",
    "auc_curves",
    "build_aa",
    "build_bpt",
    "enumerate_marginals",
    "expected_eval_count",
    "from_function",
    "from_table",
    "ideal_linear_game",
    "iou",
    "iou_curve",
    "load_saliency",
    "load_tree",
    "marginal",
    "owen_hcs_recursive",
    "owen_two_level",
    "owen_values",
    "region_distance",
    "region_pixels",
    "save_saliency",
    "save_tree",
    "score_report",
    "shapley_exact",
    "tree_validate",
]
