"""Dataset containers and the JSONL/CSV on-disk formats.

A dataset holds, for ``n`` queries with ``K`` responses each, the raw scores of
``m`` verifiers, optional binary correctness labels, optional extracted answer
strings, and a dev mask over queries.  Every other module consumes the
containers defined here.

Record layout (one per query/response pair)::

    {"query_id": "q1", "response_index": 0,
     "scores": {"rm_a": 0.31, "judge_b": 1.0},
     "label": 1, "answer": "42"}

Verifier kinds live in a sidecar manifest next to the data file
(``data.jsonl`` -> ``data.manifest.json``)::

    {"verifiers": [{"id": "rm_a", "kind": "continuous_reward"}, ...]}
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetError

__all__ = [
    "KINDS",
    "VerifierMeta",
    "ScoreTensor",
    "LabelSet",
    "DatasetBundle",
    "ValidationReport",
    "load_dataset",
    "save_dataset",
    "manifest_path",
    "split_dev",
    "validate",
    "make_bundle",
    "concat_bundles",
]

KINDS = ("continuous_reward", "binary_judge")
UNLABELED = -1


@dataclass(frozen=True)
class VerifierMeta:
    id: str
    kind: str = "continuous_reward"
    notes: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown verifier kind {self.kind!r} for {self.id!r}")


@dataclass(frozen=True)
class ScoreTensor:
    """Real-valued scores indexed ``(query, response, verifier)``.

    ``degenerate`` names verifiers whose output is constant over the whole
    tensor; normalization sets it and filtering drops those columns.
    """

    scores: np.ndarray
    verifiers: tuple[VerifierMeta, ...]
    degenerate: frozenset[str] = frozenset()

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 3:
            raise DatasetError(f"scores must be 3-d (n, K, m), got shape {s.shape}")
        if s.shape[1] < 1 or s.shape[2] < 1:
            raise DatasetError("need K >= 1 and m >= 1")
        if s.shape[2] != len(self.verifiers):
            raise DatasetError(
                f"{len(self.verifiers)} verifiers declared but scores have m={s.shape[2]}"
            )
        ids = [v.id for v in self.verifiers]
        if len(set(ids)) != len(ids):
            raise DatasetError("verifier ids must be unique")
        if not np.all(np.isfinite(s)):
            raise DatasetError("non-finite score")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "verifiers", tuple(self.verifiers))

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def K(self) -> int:
        return self.scores.shape[1]

    @property
    def m(self) -> int:
        return self.scores.shape[2]

    @property
    def ids(self) -> list[str]:
        return [v.id for v in self.verifiers]

    def is_judge(self) -> np.ndarray:
        return np.array([v.kind == "binary_judge" for v in self.verifiers])

    def flat(self) -> np.ndarray:
        """Scores as an ``(n*K, m)`` matrix, rows in (query, response) order."""
        return self.scores.reshape(-1, self.m)

    def select_verifiers(self, columns: Sequence[int]) -> "ScoreTensor":
        columns = list(columns)
        kept = [self.verifiers[c] for c in columns]
        deg = self.degenerate & {v.id for v in kept}
        return ScoreTensor(self.scores[:, :, columns], tuple(kept), frozenset(deg))


@dataclass(frozen=True)
class LabelSet:
    """Correctness labels, dev mask and extracted answers.

    ``labels`` is an int8 ``(n, K)`` array with ``-1`` marking queries that
    have no ground truth; a query is either fully labeled or fully unlabeled.
    """

    labels: np.ndarray | None
    dev_mask: np.ndarray
    answers: np.ndarray | None = None

    def __post_init__(self):
        dev = np.asarray(self.dev_mask, dtype=bool)
        object.__setattr__(self, "dev_mask", dev)
        if self.labels is not None:
            y = np.asarray(self.labels).astype(np.int8)
            if y.ndim != 2 or y.shape[0] != dev.shape[0]:
                raise DatasetError("labels must be (n, K) with n matching dev_mask")
            if not np.isin(y, (UNLABELED, 0, 1)).all():
                raise DatasetError("labels must be 0 or 1")
            part = (y == UNLABELED).any(axis=1) & (y != UNLABELED).any(axis=1)
            if part.any():
                raise DatasetError("a query must be fully labeled or fully unlabeled")
            if (dev & (y[:, 0] == UNLABELED)).any():
                raise DatasetError("dev queries must be labeled")
            object.__setattr__(self, "labels", y)
        elif dev.any():
            raise DatasetError("dev mask set but no labels available")
        if self.answers is not None:
            object.__setattr__(self, "answers", np.asarray(self.answers, dtype=object))

    @property
    def n(self) -> int:
        return self.dev_mask.shape[0]

    @property
    def labeled(self) -> np.ndarray:
        """Boolean mask over queries that carry ground truth."""
        if self.labels is None:
            return np.zeros(self.n, dtype=bool)
        return self.labels[:, 0] != UNLABELED

    @property
    def fully_labeled(self) -> bool:
        return self.labels is not None and bool(self.labeled.all())

    def require_labels(self) -> np.ndarray:
        if not self.fully_labeled:
            raise DatasetError("operation needs labels for every query")
        return self.labels

    def dev_labels(self) -> np.ndarray:
        """Flat labels of every response of every dev query."""
        if self.labels is None:
            return np.zeros(0, dtype=np.int8)
        return self.labels[self.dev_mask].ravel()

    def with_dev(self, mask: np.ndarray) -> "LabelSet":
        return replace(self, dev_mask=np.asarray(mask, dtype=bool))

    def take_queries(self, idx: np.ndarray) -> "LabelSet":
        return LabelSet(
            None if self.labels is None else self.labels[idx],
            self.dev_mask[idx],
            None if self.answers is None else self.answers[idx],
        )


@dataclass(frozen=True)
class DatasetBundle:
    scores: ScoreTensor
    labels: LabelSet | None
    query_ids: tuple[str, ...]
    source: str | None = None
    truth: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.query_ids) != self.scores.n:
            raise DatasetError("query_ids length does not match n")
        if self.labels is not None:
            if self.labels.n != self.scores.n:
                raise DatasetError("label set covers a different number of queries")
            for arr in (self.labels.labels, self.labels.answers):
                if arr is not None and arr.shape != (self.scores.n, self.scores.K):
                    raise DatasetError("label dimensions must match (n, K)")

    @cached_property
    def content_hash(self) -> str:
        """sha256 over the canonicalized records (independent of file layout)."""
        return _hash_records(_records(self))

    @property
    def n(self) -> int:
        return self.scores.n

    @property
    def K(self) -> int:
        return self.scores.K

    @property
    def m(self) -> int:
        return self.scores.m

    @property
    def y(self) -> np.ndarray:
        """Full ``(n, K)`` label matrix; raises if any query is unlabeled."""
        if self.labels is None:
            raise DatasetError("bundle has no labels")
        return self.labels.require_labels()

    @property
    def answers(self) -> np.ndarray:
        if self.labels is None or self.labels.answers is None:
            raise DatasetError("bundle has no answers")
        return self.labels.answers

    def with_labels(self, labels: LabelSet) -> "DatasetBundle":
        return replace(self, labels=labels)

    def with_scores(self, scores: ScoreTensor) -> "DatasetBundle":
        return replace(self, scores=scores)

    def take_queries(self, idx) -> "DatasetBundle":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        st = self.scores
        return DatasetBundle(
            ScoreTensor(st.scores[idx], st.verifiers, st.degenerate),
            None if self.labels is None else self.labels.take_queries(idx),
            tuple(self.query_ids[i] for i in idx),
            self.source,
        )

    def take_responses(self, idx: np.ndarray) -> "DatasetBundle":
        """Restrict every query to a subset of its responses.

        ``idx`` is an ``(n, k)`` integer array of response positions.  The
        result is re-indexed 0..k-1 in the order given.
        """
        idx = np.asarray(idx, dtype=int)
        rows = np.arange(self.n)[:, None]
        st = self.scores
        labels = None
        if self.labels is not None:
            ls = self.labels
            labels = LabelSet(
                None if ls.labels is None else ls.labels[rows, idx],
                ls.dev_mask,
                None if ls.answers is None else ls.answers[rows, idx],
            )
        return DatasetBundle(
            ScoreTensor(st.scores[rows, idx], st.verifiers, st.degenerate),
            labels,
            self.query_ids,
            self.source,
        )


@dataclass
class ValidationReport:
    n: int
    K: int
    m: int
    labeled_queries: int
    dev_queries: int
    has_answers: bool
    ranges: list[dict]
    degenerate: list[str]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "K": self.K,
            "m": self.m,
            "labeled_queries": self.labeled_queries,
            "dev_queries": self.dev_queries,
            "has_answers": self.has_answers,
            "ranges": self.ranges,
            "degenerate": self.degenerate,
        }


def make_bundle(
    scores,
    verifiers: Sequence[VerifierMeta] | Sequence[str] | None = None,
    labels=None,
    answers=None,
    query_ids: Sequence[str] | None = None,
    dev_mask=None,
    source: str | None = None,
) -> DatasetBundle:
    """Build a bundle from in-memory arrays (used by tests, synth and demos)."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 2:
        scores = scores[:, :, None]
    n, _, m = scores.shape
    if verifiers is None:
        verifiers = [f"v{k}" for k in range(m)]
    verifiers = tuple(v if isinstance(v, VerifierMeta) else VerifierMeta(v) for v in verifiers)
    if query_ids is None:
        width = len(str(max(n - 1, 0)))
        query_ids = [f"q{i:0{width}d}" for i in range(n)]
    label_set = None
    if labels is not None or answers is not None:
        label_set = LabelSet(
            None if labels is None else np.asarray(labels),
            np.zeros(n, dtype=bool) if dev_mask is None else dev_mask,
            answers,
        )
    return DatasetBundle(ScoreTensor(scores, verifiers), label_set, tuple(query_ids), source)


def concat_bundles(bundles: Iterable[DatasetBundle]) -> DatasetBundle:
    """Stack bundles with identical verifiers and K along the query axis."""
    bundles = list(bundles)
    first = bundles[0]
    for b in bundles[1:]:
        if b.scores.verifiers != first.scores.verifiers or b.K != first.K:
            raise DatasetError("bundles disagree on verifiers or K")
    scores = np.concatenate([b.scores.scores for b in bundles])
    qids = [f"{c}:{q}" for c, b in enumerate(bundles) for q in b.query_ids]
    label_set = None
    if all(b.labels is not None for b in bundles):
        ls = [b.labels for b in bundles]
        lab = None if any(x.labels is None for x in ls) else np.concatenate([x.labels for x in ls])
        ans = None if any(x.answers is None for x in ls) else np.concatenate([x.answers for x in ls])
        label_set = LabelSet(lab, np.concatenate([x.dev_mask for x in ls]), ans)
    return DatasetBundle(ScoreTensor(scores, first.scores.verifiers), label_set, tuple(qids))


# ---------------------------------------------------------------- on-disk I/O


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("jsonl", "csv"):
            raise DatasetError(f"unsupported format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "jsonl"


def _as_score(value, where: str) -> float:
    if isinstance(value, bool) or value is None:
        raise DatasetError(f"{where}: score must be a number, got {value!r}")
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise DatasetError(f"{where}: score must be a number, got {value!r}") from None
    if not math.isfinite(x):
        raise DatasetError(f"{where}: non-finite score")
    return x


def _as_label(value, where: str) -> int | None:
    if value is None or value == "":
        return None
    if isinstance(value, str):
        value = value.strip()
        if value not in ("0", "1"):
            raise DatasetError(f"{where}: label must be 0 or 1, got {value!r}")
        return int(value)
    if isinstance(value, bool) or value not in (0, 1):
        raise DatasetError(f"{where}: label must be 0 or 1, got {value!r}")
    return int(value)


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DatasetError(f"line {lineno}: record must be an object")
            for key in ("query_id", "response_index", "scores"):
                if key not in rec:
                    raise DatasetError(f"line {lineno}: missing field {key!r}")
            if not isinstance(rec["scores"], dict) or not rec["scores"]:
                raise DatasetError(f"line {lineno}: 'scores' must be a non-empty object")
            rows.append(
                {
                    "query_id": rec["query_id"],
                    "response_index": rec["response_index"],
                    "scores": rec["scores"],
                    "label": rec.get("label"),
                    "answer": rec.get("answer"),
                    "where": f"line {lineno}",
                }
            )
    return rows


def _read_csv(path: Path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in ("query_id", "response_index"):
            if key not in header:
                raise DatasetError(f"missing column {key!r}")
        reserved = {"query_id", "response_index", "label", "answer"}
        vids = [h for h in header if h not in reserved]
        if not vids:
            raise DatasetError("no verifier columns")
        for lineno, rec in enumerate(reader, 2):
            for v in vids:
                if rec.get(v) in (None, ""):
                    raise DatasetError(f"line {lineno}: missing score for {v!r}")
            answer = rec.get("answer")
            rows.append(
                {
                    "query_id": rec["query_id"],
                    "response_index": rec["response_index"],
                    "scores": {v: rec[v] for v in vids},
                    "label": rec.get("label"),
                    "answer": answer if answer not in (None, "") else None,
                    "where": f"line {lineno}",
                }
            )
    return rows


def _read_manifest(path: Path | None) -> dict[str, VerifierMeta]:
    if path is None or not Path(path).exists():
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    out = {}
    for v in doc.get("verifiers", []):
        if "id" not in v:
            raise DatasetError("manifest verifier entry missing 'id'")
        out[v["id"]] = VerifierMeta(v["id"], v.get("kind", "continuous_reward"), v.get("notes"))
    return out


def _assemble(rows: list[dict], manifest: dict[str, VerifierMeta], source: str) -> DatasetBundle:
    if not rows:
        raise DatasetError("dataset is empty")
    vids = list(rows[0]["scores"].keys())
    vset = set(vids)
    seen = set()
    by_query: dict[str, list[dict]] = {}
    for r in rows:
        where = r["where"]
        if isinstance(r["query_id"], bool) or not isinstance(r["query_id"], (str, int)):
            raise DatasetError(f"{where}: query_id must be a string")
        qid = str(r["query_id"])
        try:
            if isinstance(r["response_index"], bool):
                raise ValueError
            ridx = int(r["response_index"])
            if isinstance(r["response_index"], float) and ridx != r["response_index"]:
                raise ValueError
        except (TypeError, ValueError):
            raise DatasetError(f"{where}: response_index must be an integer") from None
        if set(r["scores"]) != vset:
            missing = sorted(vset - set(r["scores"])) or sorted(set(r["scores"]) - vset)
            raise DatasetError(f"{where}: missing field scores.{missing[0]}")
        if (qid, ridx) in seen:
            raise DatasetError(f"{where}: duplicate (query_id, response_index) ({qid!r}, {ridx})")
        seen.add((qid, ridx))
        by_query.setdefault(qid, []).append(
            {
                "ridx": ridx,
                "scores": [_as_score(r["scores"][v], f"{where}: {v}") for v in vids],
                "label": _as_label(r["label"], where),
                "answer": None if r["answer"] is None else str(r["answer"]),
            }
        )
    qids = sorted(by_query)
    sizes = {len(by_query[q]) for q in qids}
    if len(sizes) != 1:
        raise DatasetError(f"ragged K: responses per query vary ({sorted(sizes)})")
    K = sizes.pop()
    n, m = len(qids), len(vids)
    scores = np.empty((n, K, m))
    labels = np.full((n, K), UNLABELED, dtype=np.int8)
    answers = np.empty((n, K), dtype=object)
    any_label = any_answer = False
    for i, q in enumerate(qids):
        recs = sorted(by_query[q], key=lambda r: r["ridx"])
        for j, rec in enumerate(recs):
            scores[i, j] = rec["scores"]
            if rec["label"] is not None:
                labels[i, j] = rec["label"]
                any_label = True
            answers[i, j] = rec["answer"]
            any_answer |= rec["answer"] is not None
    if any_answer and any(a is None for a in answers.ravel()):
        raise DatasetError("answers must be given for every record or for none")
    verifiers = []
    for v in vids:
        meta = manifest.get(v)
        if meta is None:
            col = scores[:, :, vids.index(v)]
            kind = "binary_judge" if np.isin(col, (0.0, 1.0)).all() else "continuous_reward"
            meta = VerifierMeta(v, kind)
        verifiers.append(meta)
    label_set = None
    if any_label or any_answer:
        label_set = LabelSet(
            labels if any_label else None,
            np.zeros(n, dtype=bool),
            answers if any_answer else None,
        )
    return DatasetBundle(ScoreTensor(scores, tuple(verifiers)), label_set, tuple(qids), source)


def load_dataset(
    path: str | Path, format: str | None = None, manifest: str | Path | None = None
) -> DatasetBundle:
    """Read and validate a dataset file.

    Rows come back ordered by ``(query_id, response_index)``.  Verifier kinds
    are taken from the sidecar manifest when present; otherwise a verifier
    whose scores are all 0/1 is treated as a binary judge.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    try:
        rows = _read_csv(path) if fmt == "csv" else _read_jsonl(path)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror}") from None
    meta = _read_manifest(Path(manifest) if manifest else manifest_path(path))
    return _assemble(rows, meta, str(path))


def _records(bundle: DatasetBundle) -> list[dict]:
    st = bundle.scores
    ls = bundle.labels
    out = []
    for i, q in enumerate(bundle.query_ids):
        for j in range(st.K):
            rec = {
                "query_id": q,
                "response_index": j,
                "scores": {v.id: float(st.scores[i, j, k]) for k, v in enumerate(st.verifiers)},
            }
            if ls is not None and ls.labels is not None and ls.labels[i, j] != UNLABELED:
                rec["label"] = int(ls.labels[i, j])
            if ls is not None and ls.answers is not None:
                rec["answer"] = ls.answers[i, j]
            out.append(rec)
    return out


def _hash_records(records: list[dict]) -> str:
    h = hashlib.sha256()
    for rec in sorted(records, key=lambda r: (r["query_id"], r["response_index"])):
        h.update(json.dumps(rec, sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\n")
    return "sha256:" + h.hexdigest()


def save_dataset(bundle: DatasetBundle, path: str | Path, format: str | None = None) -> Path:
    """Write ``bundle`` plus its verifier manifest; returns the data path."""
    path = Path(path)
    fmt = _infer_format(path, format)
    records = _records(bundle)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    else:
        ids = bundle.scores.ids
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["query_id", "response_index", "label", "answer", *ids])
            for rec in records:
                w.writerow(
                    [rec["query_id"], rec["response_index"], rec.get("label", ""),
                     rec.get("answer", "") or ""]
                    + [repr(rec["scores"][v]) for v in ids]
                )
    doc = {
        "verifiers": [
            {"id": v.id, "kind": v.kind, **({"notes": v.notes} if v.notes else {})}
            for v in bundle.scores.verifiers
        ]
    }
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


# ------------------------------------------------------------- dev + validate


def split_dev(bundle: DatasetBundle, fraction: float, seed: int) -> LabelSet:
    """Mark ``ceil(fraction * n)`` labeled queries as the dev set.

    Queries are drawn uniformly without replacement from the labeled ones
    using ``numpy.random.default_rng(seed)`` (PCG64).
    """
    if not 0.0 < fraction <= 1.0:
        raise DatasetError(f"dev fraction must lie in (0, 1], got {fraction}")
    if bundle.labels is None or bundle.labels.labels is None:
        raise DatasetError("no labels available for a dev split")
    pool = np.flatnonzero(bundle.labels.labeled)
    count = math.ceil(fraction * bundle.n - 1e-9)
    if count > pool.size:
        raise DatasetError(f"need {count} labeled queries for the dev split, have {pool.size}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=count, replace=False)
    mask = np.zeros(bundle.n, dtype=bool)
    mask[chosen] = True
    return bundle.labels.with_dev(mask)


def validate(bundle: DatasetBundle) -> ValidationReport:
    st = bundle.scores
    ranges, degenerate = [], []
    for k, v in enumerate(st.verifiers):
        col = st.scores[:, :, k]
        lo, hi = float(col.min()), float(col.max())
        ranges.append(
            {"id": v.id, "kind": v.kind, "min": lo, "max": hi, "mean": float(col.mean())}
        )
        if lo == hi:
            degenerate.append(v.id)
    ls = bundle.labels
    return ValidationReport(
        n=st.n,
        K=st.K,
        m=st.m,
        labeled_queries=0 if ls is None else int(ls.labeled.sum()),
        dev_queries=0 if ls is None else int(ls.dev_mask.sum()),
        has_answers=ls is not None and ls.answers is not None,
        ranges=ranges,
        degenerate=degenerate,
    )
