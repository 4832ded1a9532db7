"""Selection results shared by every strategy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SelectionResult", "argmax_first"]


def argmax_first(values) -> np.ndarray:
    """Row-wise argmax of an ``(n, K)`` array; ties go to the smallest index."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("expected an (n, K) array")
    return np.argmax(values, axis=1)


@dataclass(frozen=True)
class SelectionResult:
    """Chosen response index per query, plus the scores it was chosen by."""

    indices: np.ndarray
    strategy: str = ""
    scores: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))

    def __len__(self) -> int:
        return len(self.indices)

    @classmethod
    def from_scores(cls, scores, strategy: str = "") -> "SelectionResult":
        scores = np.asarray(scores, dtype=float)
        return cls(argmax_first(scores), strategy, scores)

    def to_dict(self, query_ids=None) -> dict:
        ids = list(query_ids) if query_ids is not None else list(range(len(self)))
        return {
            "strategy": self.strategy,
            "selections": [
                {"query_id": q, "response_index": int(j)} for q, j in zip(ids, self.indices)
            ],
        }
