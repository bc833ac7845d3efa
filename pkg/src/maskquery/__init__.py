"""maskquery: query engine for collections of image masks.

Masks are 2-D arrays of values in [0, 1].  The core primitive counts pixels
inside a region whose values fall in a range; a per-mask grid of cumulative
histograms bounds that count without touching mask payloads, and the engine
uses those bounds to answer filter, top-k, and grouped-aggregation statements
while loading as few masks as possible.
"""

from .catalog import (
    Catalog,
    CatalogError,
    ImageRecord,
    MaskRecord,
    MaskStore,
    catalog_append,
    catalog_load,
    catalog_save,
)
from .chi import (
    BoundPair,
    Chi,
    ChiConfig,
    ChiFormatError,
    MaskNotIndexed,
    build_index,
    index_load,
    index_save,
)
from .dialect import (
    ParseError,
    QueryPlan,
    ValidationError,
    parse,
    render,
    validate,
)
from .engine import (
    ExecStats,
    ResultRow,
    confusion_matrix,
    eval_aggregation,
    eval_filter,
    eval_topk,
)
from .engine import eval as eval_plan
from .images import augment_image, load_image, save_image, splitmix64
from .masks import (
    MaskFormatError,
    Roi,
    ValueRange,
    cp_exact,
    load_mask,
    mask_dims,
    save_mask,
)
from .oracle import eval_brute, rows_match

__version__ = "0.1.0"

__all__ = [
    "Catalog",
    "CatalogError",
    "ImageRecord",
    "MaskRecord",
    "MaskStore",
    "catalog_append",
    "catalog_load",
    "catalog_save",
    "BoundPair",
    "Chi",
    "ChiConfig",
    "ChiFormatError",
    "MaskNotIndexed",
    "build_index",
    "index_load",
    "index_save",
    "ParseError",
    "QueryPlan",
    "ValidationError",
    "parse",
    "render",
    "validate",
    "ExecStats",
    "ResultRow",
    "confusion_matrix",
    "eval_plan",
    "eval_filter",
    "eval_topk",
    "eval_aggregation",
    "augment_image",
    "load_image",
    "save_image",
    "splitmix64",
    "MaskFormatError",
    "Roi",
    "ValueRange",
    "cp_exact",
    "load_mask",
    "mask_dims",
    "save_mask",
    "eval_brute",
    "rows_match",
    "__version__",
]
