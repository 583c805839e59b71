"""The adaptive engine shared by the authorization and resource servers."""
from __future__ import annotations

import threading
from typing import Iterable, Optional, Sequence

from radaa.engine.features import (
    IMPOSSIBLE_SPEED_KMH,
    TAL_MAX,
    FeatureVector,
    TransactionContext,
    extract_features,
)
from radaa.engine.knn import KnnModel
from radaa.engine.scoring import (
    DEFAULT_THRESHOLDS,
    DEFAULT_WEIGHTS,
    Decision,
    Posture,
    RiskAssessment,
    RiskClass,
    Source,
    Stage,
    classify,
    decide,
    rule_score,
)
from radaa.store import Store


class AdaptiveEngine:
    def __init__(self, weights: Sequence[float] = DEFAULT_WEIGHTS,
                 thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                 posture: Posture = Posture.NORMAL, classifier: str = "rule",
                 model: Optional[KnnModel] = None, store: Optional[Store] = None,
                 max_speed_kmh: float = IMPOSSIBLE_SPEED_KMH, tal_max: int = TAL_MAX):
        if classifier not in ("rule", "knn"):
            raise ValueError("classifier must be 'rule' or 'knn'")
        self.weights = tuple(weights)
        self.thresholds = tuple(thresholds)
        self.posture = posture
        self.classifier = classifier
        self.model = model if model is not None else KnnModel()
        self.store = store if store is not None else Store()
        self.max_speed_kmh = max_speed_kmh
        self.tal_max = tal_max
        self._lock = threading.RLock()

    @classmethod
    def from_config(cls, config, store: Optional[Store] = None) -> "AdaptiveEngine":
        model = KnnModel(k=config.knn.k, max_samples=config.knn.capacity)
        if store is not None:
            saved = store.get("knn-model", "samples")
            if saved:
                model = KnnModel.from_json(saved, k=config.knn.k, max_samples=config.knn.capacity)
        return cls(
            weights=config.risk.weights, thresholds=config.risk.thresholds,
            posture=config.posture, classifier=config.risk.classifier, model=model,
            store=store, max_speed_kmh=config.risk.travel_speed_kmh, tal_max=config.risk.tal_max,
        )

    def last_seen(self, subject: str):
        entry = self.store.get("subject-history", subject)
        if entry is None:
            return None
        return (tuple(entry["geo"]), entry["ts"])

    def features(self, ctx: TransactionContext) -> FeatureVector:
        last = self.last_seen(ctx.subject)
        if last is not None and last[1] > ctx.timestamp:
            last = None
        return extract_features(ctx, last, self.max_speed_kmh, self.tal_max)

    def assess(self, ctx: TransactionContext, record: bool = True) -> RiskAssessment:
        with self._lock:
            f = self.features(ctx)
            score = rule_score(f, self.posture, self.weights)
            if self.classifier == "knn" and len(self.model):
                assessment = RiskAssessment(score, self.model.classify(f), f, Source.KNN)
            else:
                assessment = RiskAssessment(score, classify(score, self.thresholds), f, Source.RULE)
            if record and ctx.geo is not None:
                self.store.put("subject-history", ctx.subject, {"geo": list(ctx.geo), "ts": ctx.timestamp})
            return assessment

    def decide(self, assessment: RiskAssessment, stage: Stage, requested_scopes: Iterable[str] = ()) -> Decision:
        return decide(assessment, stage, requested_scopes)

    def observe(self, features: FeatureVector, label: "RiskClass | str") -> None:
        with self._lock:
            self.model.observe(features, label)

    def escalate(self) -> Posture:
        with self._lock:
            self.posture = self.posture.escalate()
            return self.posture

    def snapshot(self) -> None:
        """Persist the KNN samples into the store."""
        with self._lock:
            self.store.put("knn-model", "samples", self.model.to_json())
