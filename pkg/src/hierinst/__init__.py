"""Hierarchical multi-label instrument recognition on 1-second MFCC frames."""

from .taxonomy import (
    LabelSpace,
    Taxonomy,
    TaxonomyNode,
    build_label_space,
    expand_labels,
    group_of,
    load_taxonomy,
    truncate,
)

__version__ = "0.1.0"
