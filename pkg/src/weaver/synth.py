"""Synthetic datasets drawn from the verifier label model.

All randomness comes from one ``numpy.random.default_rng(seed)`` (PCG64)
stream consumed in a fixed order:

1. per-verifier ``tpr`` then ``tnr`` (only when not given explicitly),
2. per-query correctness probability (beta mode only),
3. labels ``y[i, j]``,
4. scores (discrete: one uniform per vote; continuous: a Beta(f1) draw and a
   Beta(f0) draw per score, selected by the label),
5. wrong-answer ids for incorrect responses.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .datastore import DatasetBundle, LabelSet, ScoreTensor, VerifierMeta
from .errors import DatasetError
from .evaluation import pass_at_k
from .scaling import CurvePoint

__all__ = ["SynthSpec", "generate", "empirical_passk_curve"]


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic bundle.

    ``beta=(a, b)`` switches from a fixed per-response prior to per-query
    difficulty ``p_i ~ Beta(a, b)``.  When ``tpr``/``tnr`` are omitted they
    are drawn uniformly from ``accuracy_range``.  In continuous mode every
    verifier scores correct responses from ``Beta(*f1)`` and incorrect ones
    from ``Beta(*f0)``; pass lists of pairs to vary them per verifier.
    """

    n: int = 200
    K: int = 10
    m: int = 5
    prior: float = 0.4
    beta: tuple[float, float] | None = None
    tpr: tuple[float, ...] | None = None
    tnr: tuple[float, ...] | None = None
    accuracy_range: tuple[float, float] = (0.6, 0.9)
    score_mode: str = "discrete"
    f1: tuple = (5.0, 2.0)
    f0: tuple = (2.0, 5.0)
    n_wrong_answers: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.K, self.m) < 1:
            raise DatasetError("n, K and m must be positive")
        if self.beta is None:
            if not 0.0 < self.prior < 1.0:
                raise DatasetError("prior must lie in (0, 1)")
        elif len(self.beta) != 2 or min(self.beta) <= 0:
            raise DatasetError("beta shape parameters must be positive")
        lo, hi = self.accuracy_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise DatasetError("accuracy_range must satisfy 0 <= lo <= hi <= 1")
        for name in ("tpr", "tnr"):
            val = getattr(self, name)
            if val is not None:
                arr = np.asarray(val, dtype=float)
                if arr.shape != (self.m,) or np.any(arr < 0) or np.any(arr > 1):
                    raise DatasetError(f"{name} needs m values in [0, 1]")
        if self.score_mode not in ("discrete", "continuous"):
            raise DatasetError(f"unknown score_mode {self.score_mode!r}")
        for shape in (self._shapes(self.f1), self._shapes(self.f0)):
            if np.any(shape <= 0):
                raise DatasetError("score Beta parameters must be positive")
        if self.n_wrong_answers < 1:
            raise DatasetError("n_wrong_answers must be >= 1")

    def _shapes(self, f) -> np.ndarray:
        arr = np.asarray(f, dtype=float)
        if arr.shape == (2,):
            return np.tile(arr, (self.m, 1))
        if arr.shape != (self.m, 2):
            raise DatasetError("f1/f0 must be a pair or m pairs")
        return arr

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        for key in ("beta", "tpr", "tnr", "accuracy_range"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        for key in ("f1", "f0"):
            if key in doc:
                v = doc[key]
                doc[key] = tuple(tuple(x) for x in v) if np.ndim(v) == 2 else tuple(v)
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key, val in doc.items():
            if isinstance(val, tuple):
                doc[key] = [list(x) if isinstance(x, tuple) else x for x in val]
        return doc


def generate(spec: SynthSpec) -> DatasetBundle:
    """Draw a fully labeled bundle; generating parameters go in ``bundle.truth``."""
    rng = np.random.default_rng(spec.seed)
    n, K, m = spec.n, spec.K, spec.m
    lo, hi = spec.accuracy_range
    tpr = np.asarray(spec.tpr, dtype=float) if spec.tpr is not None else rng.uniform(lo, hi, m)
    tnr = np.asarray(spec.tnr, dtype=float) if spec.tnr is not None else rng.uniform(lo, hi, m)
    if spec.beta is None:
        p = np.full(n, spec.prior)
    else:
        p = rng.beta(spec.beta[0], spec.beta[1], n)
    y = (rng.random((n, K)) < p[:, None]).astype(np.int8)

    if spec.score_mode == "discrete":
        u = rng.random((n, K, m))
        p_pos = np.where(y[:, :, None] == 1, tpr, 1.0 - tnr)
        scores = (u < p_pos).astype(float)
        kind = "binary_judge"
    else:
        f1, f0 = spec._shapes(spec.f1), spec._shapes(spec.f0)
        s1 = rng.beta(f1[:, 0], f1[:, 1], (n, K, m))
        s0 = rng.beta(f0[:, 0], f0[:, 1], (n, K, m))
        scores = np.where(y[:, :, None] == 1, s1, s0)
        kind = "continuous_reward"

    wrong = rng.integers(0, spec.n_wrong_answers, (n, K))
    answers = np.where(y == 1, "correct", np.char.add("wrong", wrong.astype(str))).astype(object)

    width = len(str(n - 1))
    verifiers = tuple(VerifierMeta(f"v{k}", kind) for k in range(m))
    truth = {
        "spec": spec.to_dict(),
        "tpr": tpr.tolist(),
        "tnr": tnr.tolist(),
        "query_p": p.tolist(),
        "label_rate": float(y.mean()),
    }
    return DatasetBundle(
        ScoreTensor(scores, verifiers),
        LabelSet(y, np.zeros(n, dtype=bool), answers),
        tuple(f"q{i:0{width}d}" for i in range(n)),
        source=f"synth:seed={spec.seed}",
        truth=truth,
    )


def empirical_passk_curve(bundle: DatasetBundle, ks) -> list[CurvePoint]:
    y = bundle.y
    return [CurvePoint(int(k), pass_at_k(y, int(k))) for k in ks]
