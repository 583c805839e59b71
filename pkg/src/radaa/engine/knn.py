"""Incrementally trained k-nearest-neighbour risk classifier."""
from __future__ import annotations

import heapq
import json
import threading
from collections import deque
from pathlib import Path
from typing import Iterable

from radaa.engine.features import FeatureVector
from radaa.engine.scoring import RiskClass


class EmptyModel(ValueError):
    pass


class KnnModel:
    """Sample store with FIFO eviction at ``max_samples``.

    Distance ties go to the earlier-inserted sample; vote ties go to the
    higher risk class.
    """

    def __init__(self, k: int = 5, max_samples: int = 10000,
                 samples: Iterable[tuple[Iterable[float], "RiskClass | str"]] = ()):
        if k < 1 or k % 2 == 0:
            raise ValueError("k must be an odd positive integer")
        if max_samples < 1:
            raise ValueError("max_samples must be positive")
        self.k = k
        self.max_samples = max_samples
        self._samples: deque[tuple[int, tuple[float, ...], RiskClass]] = deque()
        self._counter = 0
        self._lock = threading.RLock()
        for vector, label in samples:
            self.observe(vector, label)

    def __len__(self) -> int:
        return len(self._samples)

    @property
    def samples(self) -> list[tuple[tuple[float, ...], RiskClass]]:
        with self._lock:
            return [(vec, label) for _, vec, label in self._samples]

    def observe(self, features: "FeatureVector | Iterable[float]", label: "RiskClass | str") -> "KnnModel":
        vector = FeatureVector.of(features).as_tuple()
        label = RiskClass.parse(label)
        with self._lock:
            self._samples.append((self._counter, vector, label))
            self._counter += 1
            while len(self._samples) > self.max_samples:
                self._samples.popleft()
        return self

    def neighbours(self, features: "FeatureVector | Iterable[float]", k: int | None = None):
        query = tuple(features)
        with self._lock:
            if not self._samples:
                raise EmptyModel("cannot classify with an empty model")
            k = min(k or self.k, len(self._samples))
            return heapq.nsmallest(
                k,
                ((sum((a - b) ** 2 for a, b in zip(vec, query)), order, label)
                 for order, vec, label in self._samples),
            )

    def classify(self, features: "FeatureVector | Iterable[float]", k: int | None = None) -> RiskClass:
        """Majority label of the nearest samples; ``k`` overrides the model's own k for one query."""
        votes = {cls: 0 for cls in RiskClass}
        for _, _, label in self.neighbours(features, k):
            votes[label] += 1
        best = max(votes.values())
        return max(cls for cls, n in votes.items() if n == best)

    def to_json(self) -> list:
        return [[list(vec), label.name] for vec, label in self.samples]

    @classmethod
    def from_json(cls, doc: list, k: int = 5, max_samples: int = 10000) -> "KnnModel":
        return cls(k=k, max_samples=max_samples, samples=[(vec, label) for vec, label in doc])

    def save(self, path: "str | Path") -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: "str | Path", k: int = 5, max_samples: int = 10000) -> "KnnModel":
        return cls.from_json(json.loads(Path(path).read_text()), k=k, max_samples=max_samples)


def knn_classify(model: KnnModel, f: FeatureVector, k: int | None = None) -> RiskClass:
    return model.classify(f, k)


def observe(model: KnnModel, f: FeatureVector, label: "RiskClass | str") -> KnnModel:
    return model.observe(f, label)
