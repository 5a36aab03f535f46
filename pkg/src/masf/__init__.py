"""Out-of-distribution detection for CNN feature maps via hierarchical eCDF tests.

Calibration learns, per class, the empirical distribution of a spatial
statistic for every monitored channel, recalibrates each layer's channel
combination against its own empirical distribution, and finally calibrates
the cross-layer combination.  Scoring turns a fresh sample's feature maps
into one right-tail p-value per class; under the calibration distribution
these p-values are uniform, so a fixed rejection threshold alpha yields a
false-alarm rate of at most alpha without seeing any anomalous data.
"""

from ._version import __version__
from .artifact import load_detector, save_detector
from .errors import MasfError
from .metrics import (
    ScoreSet,
    aggregate,
    auroc,
    evaluate_scores,
    ks_uniformity,
    qq_export,
    qq_rows,
    tnr_threshold,
    tpr_at_tnr,
)
from .pipeline import (
    CalibratedDetector,
    DetectionReport,
    Scorer,
    adjusted_alpha_bound,
    calibrate,
    sample_channels,
    score,
    score_all_classes,
)
from .quantiles import (
    ArrayQuantileTracker,
    QuantileTable,
    QuantileTracker,
    TableBank,
    TrackerConfig,
    lookup_tails,
)
from .reductions import SchemeSpec, parse_scheme
from .stats import bonferroni, chi_square_sf, ecdf_value, fisher, simes, two_sided_pvalue
from .synthetic import ShiftSpec, SyntheticSpec, generate
from .tensor_io import (
    FeatureRecord,
    LayerSpec,
    Manifest,
    SampleEntry,
    read_manifest,
    read_tensor,
    stream_records,
    write_manifest,
    write_tensor,
)

__all__ = [
    "__version__",
    "MasfError",
    "ScoreSet",
    "aggregate",
    "auroc",
    "evaluate_scores",
    "ks_uniformity",
    "qq_export",
    "qq_rows",
    "tnr_threshold",
    "tpr_at_tnr",
    "CalibratedDetector",
    "DetectionReport",
    "Scorer",
    "adjusted_alpha_bound",
    "calibrate",
    "sample_channels",
    "score",
    "score_all_classes",
    "load_detector",
    "save_detector",
    "ArrayQuantileTracker",
    "QuantileTable",
    "QuantileTracker",
    "TableBank",
    "TrackerConfig",
    "lookup_tails",
    "SchemeSpec",
    "parse_scheme",
    "bonferroni",
    "chi_square_sf",
    "ecdf_value",
    "fisher",
    "simes",
    "two_sided_pvalue",
    "ShiftSpec",
    "SyntheticSpec",
    "generate",
    "FeatureRecord",
    "LayerSpec",
    "Manifest",
    "SampleEntry",
    "read_manifest",
    "read_tensor",
    "stream_records",
    "write_manifest",
    "write_tensor",
]
