from radaa.engine.engine import AdaptiveEngine
from radaa.engine.features import (
    FEATURE_NAMES,
    FeatureVector,
    TransactionContext,
    extract_features,
)
from radaa.engine.geo import haversine_km
from radaa.engine.knn import EmptyModel, KnnModel, knn_classify, observe
from radaa.engine.scoring import (
    Action,
    Decision,
    Posture,
    RiskAssessment,
    RiskClass,
    Source,
    Stage,
    classify,
    decide,
    is_elevated,
    rule_score,
)

__all__ = [
    "AdaptiveEngine", "FEATURE_NAMES", "FeatureVector", "TransactionContext", "extract_features",
    "haversine_km", "EmptyModel", "KnnModel", "knn_classify", "observe", "Action", "Decision",
    "Posture", "RiskAssessment", "RiskClass", "Source", "Stage", "classify", "decide",
    "is_elevated", "rule_score",
]
