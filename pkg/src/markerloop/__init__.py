"""markerloop: a clinician-in-the-loop workbench for explainable tabular
risk models.

Curate a marker schema, train auditable models (boosted trees, random
forest, logistic regression), score per-marker impact, let a reviewer reject
clinically irrelevant high-impact markers, and retrain until only approved
markers drive decisions.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .schema import (  # noqa: F401
    CATEGORICAL,
    NUMERIC,
    MarkerSchema,
    MarkerSpec,
    SchemaError,
    default_schema,
    load_schema,
    save_schema,
)
from .table import (  # noqa: F401
    MISSING,
    PatientTable,
    TableError,
    ValidationReport,
    export_table,
    ingest_table,
    select_target,
    validate_ranges,
)
from .synthetic import SyntheticSpec, generate_synthetic  # noqa: F401
from .preprocess import (  # noqa: F401
    MISSING_CATEGORY,
    DesignMatrix,
    ImputePolicy,
    NumericTransform,
    Split,
    SplitSpec,
    drop_sparse_markers,
    encode,
    impute,
    mc_splits,
    rebalance,
    split,
    transform_numeric,
)
from .metrics import (  # noqa: F401
    ConfusionMatrix,
    MetricsReport,
    RocCurve,
    classification_metrics,
    confusion,
    correlation_matrix,
    evaluate_scores,
    mean_reports,
    pearson,
    roc_auc,
)
from .models import (  # noqa: F401
    HyperParams,
    TrainedModel,
    audit_gbdt,
    deserialize_model,
    predict_proba,
    serialize_model,
    train,
    train_gbdt,
    train_logistic,
    train_random_forest,
)
