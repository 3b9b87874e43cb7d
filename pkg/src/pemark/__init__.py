"""Distortion-free watermarking of JSON objects through top-level key order."""

from .core import (
    EmbedConfig,
    ExtractionReport,
    GroupLayout,
    Watermark,
    embed,
    extract,
    generate_decoys,
    plan_groups,
    reorder_groups,
    vote,
)
from .errors import PEMarkError
from .ordered_doc import Entry, OrderedDocument, RawValue, parse, reorder, serialize
from .permcode import (
    LehmerCode,
    code_to_integer,
    code_to_permutation,
    factorial_decompose,
    min_threshold,
    permutation_to_code,
)

__version__ = "0.1.0"

__all__ = [
    "EmbedConfig",
    "Entry",
    "ExtractionReport",
    "GroupLayout",
    "LehmerCode",
    "OrderedDocument",
    "PEMarkError",
    "RawValue",
    "Watermark",
    "code_to_integer",
    "code_to_permutation",
    "embed",
    "extract",
    "factorial_decompose",
    "generate_decoys",
    "min_threshold",
    "parse",
    "permutation_to_code",
    "plan_groups",
    "reorder",
    "reorder_groups",
    "serialize",
    "vote",
]
