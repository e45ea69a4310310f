"""Logistic-tree normal (LTN) models for tree-structured compositional counts."""

from .cov_model import CovModelConfig, fit_cov, summarize_cov
from .errors import (
    AlignmentError,
    DomainError,
    FormatError,
    LTNError,
    NewickError,
    NumericalError,
    ValidationError,
)
from .evaluation import cov_losses, geweke_test, roc_from_scores
from .io import PosteriorDraws, read_draws, read_otu_table, write_draws
from .mixed_model import MixedConfig, MixedDesign, compute_pmap_pjap, fit_mixed
from .phylo import (
    CountDecomposition,
    OtuTable,
    PhyloTree,
    balanced_tree,
    binarize,
    decompose_counts,
    parse_newick,
    read_newick,
)
from .transforms import (
    alr,
    alr_inverse,
    clr,
    clr_inverse,
    ilr,
    ilr_inverse,
    ltn_to_clr_cov,
    tlr,
    tlr_inverse,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "CountDecomposition",
    "CovModelConfig",
    "DomainError",
    "FormatError",
    "LTNError",
    "MixedConfig",
    "MixedDesign",
    "NewickError",
    "NumericalError",
    "OtuTable",
    "PhyloTree",
    "PosteriorDraws",
    "ValidationError",
    "alr",
    "alr_inverse",
    "balanced_tree",
    "binarize",
    "clr",
    "clr_inverse",
    "compute_pmap_pjap",
    "cov_losses",
    "decompose_counts",
    "fit_cov",
    "fit_mixed",
    "geweke_test",
    "ilr",
    "ilr_inverse",
    "ltn_to_clr_cov",
    "parse_newick",
    "read_draws",
    "read_newick",
    "read_otu_table",
    "roc_from_scores",
    "summarize_cov",
    "tlr",
    "tlr_inverse",
    "write_draws",
]
