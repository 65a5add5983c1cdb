"""Persistent vector index over chunks at all granularities.

Each retriever gets its own partition holding dense vectors (cosine,
normalized at upsert) and/or multi-vector rows for late-interaction
maxsim scoring, with metadata filtering by document set, granularity,
and modality. Two dense backends sit behind one interface: an exact flat
scanner (the default and the correctness oracle) and an opt-in
approximate k-NN-graph backend for large partitions. Readers work on
immutable snapshots, so searches never block on writes.

On-disk layout per partition: ``index/<retriever>/meta.db`` (sqlite),
``dense.bin`` (little-endian float32 rows with a dim/count header) and
``multi/<doc_id>.bin`` (per-document multi-vector rows).
"""

from __future__ import annotations

import heapq
import sqlite3
import struct
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .chunking import GranularityLevel, Modality
from .gateway import EmbeddingVector, MultiVector

_DENSE_MAGIC = b"DRDENSE1"
_MULTI_MAGIC = b"DRMULTI1"


class VectorIndexError(RuntimeError):
    pass


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class IndexEntry:
    chunk_id: str
    doc_id: str
    granularity: GranularityLevel
    modality: Modality
    retriever_name: str
    dense: EmbeddingVector | None = None
    multi: MultiVector | None = None

    def __post_init__(self):
        if self.dense is None and self.multi is None:
            raise VectorIndexError(f"entry {self.chunk_id}: needs dense or multi vectors")


@dataclass(frozen=True)
class SearchFilter:
    doc_ids: frozenset[str] | None = None
    granularity: GranularityLevel | None = None
    modalities: frozenset[Modality] | None = None

    def matches(self, doc_id: str, granularity: GranularityLevel, modality: Modality) -> bool:
        if self.doc_ids is not None and doc_id not in self.doc_ids:
            return False
        if self.granularity is not None and granularity != self.granularity:
            return False
        if self.modalities is not None and modality not in self.modalities:
            return False
        return True


MATCH_ALL = SearchFilter()


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    doc_id: str
    score: float
    rank: int


def maxsim_score(query_mv, passage_mv) -> float:
    """Late-interaction score: sum over query rows of the max inner
    product against passage rows. Accepts MultiVector or (rows, dim)
    ndarrays; rows are assumed unit-normalized at ingest."""
    q = _mv_array(query_mv)
    p = _mv_array(passage_mv)
    if p.shape[0] == 0:
        raise ScoreError("passage has no rows")
    if q.shape[0] == 0:
        raise ScoreError("query has no rows")
    if q.shape[1] != p.shape[1]:
        raise ScoreError(f"dim mismatch: query {q.shape[1]} vs passage {p.shape[1]}")
    return float((q @ p.T).max(axis=1).sum())


def _mv_array(mv) -> np.ndarray:
    if isinstance(mv, MultiVector):
        return np.asarray([r.values for r in mv.rows], dtype=np.float32)
    arr = np.asarray(mv, dtype=np.float32)
    if arr.ndim != 2:
        arr = arr.reshape(0, 0) if arr.size == 0 else arr.reshape(1, -1)
    return arr


def _normalize(arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return (arr / norms).astype(np.float32)


@dataclass(frozen=True)
class _Meta:
    doc_id: str
    granularity: GranularityLevel
    modality: Modality


@dataclass
class _Snapshot:
    """Immutable view of one partition; swapped wholesale on every write."""

    dim: int | None = None
    meta: dict[str, _Meta] = field(default_factory=dict)
    dense_ids: tuple[str, ...] = ()
    dense: np.ndarray | None = None  # (n, dim) normalized float32
    multi: dict[str, np.ndarray] = field(default_factory=dict)
    graph: "_KnnGraph | None" = None
    centroid_ids: tuple[str, ...] = ()
    centroids: np.ndarray | None = None


class _KnnGraph:
    """Approximate search over a brute-force-built k-NN graph.

    Best-first beam search from a deterministic set of entry points; on
    uniform random data, M=32 neighbors with ef around 256 lands well
    above 0.99 recall@10 while scanning a small fraction of the rows.
    """

    def __init__(self, matrix: np.ndarray, m_neighbors: int = 32, n_entries: int = 32, seed: int = 7):
        n = matrix.shape[0]
        m = min(m_neighbors, max(n - 1, 1))
        self.neighbors = np.zeros((n, m), dtype=np.int32)
        block = max(1, min(1024, int(2**27 / max(n, 1))))
        for start in range(0, n, block):
            rows = matrix[start : start + block]
            sims = rows @ matrix.T
            for i in range(rows.shape[0]):
                sims[i, start + i] = -np.inf
            if m < n - 1:
                part = np.argpartition(-sims, m, axis=1)[:, :m]
            else:
                part = np.argsort(-sims, axis=1)[:, :m]
            self.neighbors[start : start + block] = part
        rng = np.random.default_rng(seed)
        self.entries = rng.choice(n, size=min(n_entries, n), replace=False)

    def search(self, matrix: np.ndarray, query: np.ndarray, ef: int) -> np.ndarray:
        """Return candidate row indices (unsorted) via beam search."""
        n = matrix.shape[0]
        visited = np.zeros(n, dtype=bool)
        entry_scores = matrix[self.entries] @ query
        visited[self.entries] = True
        # candidate heap is max-first (negated); result heap min-first
        candidates = [(-s, int(i)) for s, i in zip(entry_scores, self.entries)]
        heapq.heapify(candidates)
        results = [(float(s), int(i)) for s, i in zip(entry_scores, self.entries)]
        heapq.heapify(results)
        while len(results) > ef:
            heapq.heappop(results)
        while candidates:
            neg, idx = heapq.heappop(candidates)
            if len(results) >= ef and -neg < results[0][0]:
                break
            nbrs = self.neighbors[idx]
            fresh = nbrs[~visited[nbrs]]
            if fresh.size == 0:
                continue
            visited[fresh] = True
            scores = matrix[fresh] @ query
            floor = results[0][0] if len(results) >= ef else -np.inf
            for s, i in zip(scores, fresh):
                if s > floor or len(results) < ef:
                    heapq.heappush(candidates, (-float(s), int(i)))
                    heapq.heappush(results, (float(s), int(i)))
                    if len(results) > ef:
                        heapq.heappop(results)
                        floor = results[0][0]
        return np.asarray([i for _, i in results], dtype=np.int64)


class VectorIndex:
    """Vector store partitioned by retriever name.

    ``data_dir=None`` keeps everything in memory; otherwise every upsert
    is persisted before returning and ``VectorIndex(dir)`` reloads
    bit-exactly. ``backend`` selects the dense search strategy: "exact"
    (flat scan) or "approx" (k-NN graph, built lazily per partition).
    """

    def __init__(self, data_dir: str | Path | None = None, backend: str = "exact", ef_search: int = 256):
        if backend not in ("exact", "approx"):
            raise VectorIndexError(f"unknown backend {backend!r}")
        self.backend = backend
        self.ef_search = ef_search
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self._partitions: dict[str, _Snapshot] = {}
        self._lock = threading.Lock()
        if self.data_dir is not None and self.data_dir.is_dir():
            for part_dir in sorted(self.data_dir.iterdir()):
                if (part_dir / "meta.db").is_file():
                    self._partitions[part_dir.name] = self._load_partition(part_dir)

    # -- public API ---------------------------------------------------------

    def retriever_names(self) -> list[str]:
        return sorted(self._partitions)

    def count(self, retriever_name: str | None = None) -> int:
        if retriever_name is not None:
            snap = self._partitions.get(retriever_name)
            return len(snap.meta) if snap else 0
        return sum(len(s.meta) for s in self._partitions.values())

    def upsert(self, entries: list[IndexEntry]) -> int:
        """Insert or replace entries; idempotent on (chunk_id, retriever).
        Returns the number of live entries after the write."""
        by_retriever: dict[str, list[IndexEntry]] = {}
        for e in entries:
            by_retriever.setdefault(e.retriever_name, []).append(e)
        with self._lock:
            for name, batch in by_retriever.items():
                old = self._partitions.get(name, _Snapshot())
                snap = self._apply(old, batch)
                if self.data_dir is not None:
                    self._persist_partition(name, snap, changed_docs={e.doc_id for e in batch})
                self._partitions[name] = snap
        return self.count()

    def search_dense(
        self,
        query: EmbeddingVector,
        k: int,
        filter: SearchFilter = MATCH_ALL,
        retriever_name: str = "",
    ) -> list[RetrievalHit]:
        """Top-k by cosine similarity under the filter, descending score,
        ties broken by ascending chunk_id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        snap = self._snapshot(retriever_name)
        if snap.dense is None or not snap.dense_ids:
            return []
        if query.dim != snap.dim:
            raise VectorIndexError(
                f"{retriever_name}: query dim {query.dim} != partition dim {snap.dim}"
            )
        q = _normalize(np.asarray(query.values, dtype=np.float32))
        mask = self._filter_mask(snap.dense_ids, snap.meta, filter)
        if not mask.any():
            return []
        # graph traversal only pays off when the filter passes most rows;
        # selective filters leave a small set that the flat scan handles
        if self.backend == "approx" and mask.sum() > 4 * k and mask.mean() > 0.5:
            if snap.graph is None:
                snap = self._ensure_graph(retriever_name)
            cand = snap.graph.search(snap.dense, q, ef=max(self.ef_search, 4 * k))
            cand = cand[mask[cand]]
            if cand.size == 0:
                return []
            scores = snap.dense[cand] @ q
            ids = [snap.dense_ids[i] for i in cand]
        else:
            idxs = np.flatnonzero(mask)
            scores = snap.dense[idxs] @ q
            ids = [snap.dense_ids[i] for i in idxs]
        return self._top_k(ids, scores, k, snap.meta)

    def search_multivector(
        self,
        query_mv: MultiVector,
        k: int,
        filter: SearchFilter = MATCH_ALL,
        retriever_name: str = "",
        prefilter: bool | None = None,
    ) -> list[RetrievalHit]:
        """Top-k by maxsim. Exhaustive over the filtered entries unless a
        centroid prefilter is active (default when the approximate backend
        is selected and the candidate set is large): dense row-centroid
        top-(10k) then exact maxsim rerank."""
        if k < 1:
            raise ValueError("k must be >= 1")
        snap = self._snapshot(retriever_name)
        if not snap.multi:
            return []
        if query_mv.dim != snap.dim:
            raise VectorIndexError(
                f"{retriever_name}: query dim {query_mv.dim} != partition dim {snap.dim}"
            )
        q = _mv_array(query_mv)
        candidates = [
            cid
            for cid in snap.multi
            if filter.matches(
                snap.meta[cid].doc_id, snap.meta[cid].granularity, snap.meta[cid].modality
            )
        ]
        if prefilter is None:
            prefilter = self.backend == "approx" and len(candidates) > 10 * k
        if prefilter and snap.centroids is not None and len(candidates) > 10 * k:
            cand_set = set(candidates)
            keep = [i for i, cid in enumerate(snap.centroid_ids) if cid in cand_set]
            centroid_scores = snap.centroids[keep] @ _normalize(q.mean(axis=0))
            order = np.argsort(-centroid_scores)[: 10 * k]
            candidates = [snap.centroid_ids[keep[i]] for i in order]
        ids, scores = [], []
        for cid in candidates:
            ids.append(cid)
            scores.append((q @ snap.multi[cid].T).max(axis=1).sum())
        if not ids:
            return []
        return self._top_k(ids, np.asarray(scores, dtype=np.float64), k, snap.meta)

    # -- internals ----------------------------------------------------------

    def _snapshot(self, retriever_name: str) -> _Snapshot:
        snap = self._partitions.get(retriever_name)
        if snap is None:
            raise VectorIndexError(f"unknown retriever {retriever_name!r}")
        return snap

    @staticmethod
    def _filter_mask(ids: tuple[str, ...], meta: dict[str, _Meta], filt: SearchFilter) -> np.ndarray:
        if filt.doc_ids is None and filt.granularity is None and filt.modalities is None:
            return np.ones(len(ids), dtype=bool)
        return np.asarray(
            [filt.matches(meta[c].doc_id, meta[c].granularity, meta[c].modality) for c in ids],
            dtype=bool,
        )

    @staticmethod
    def _top_k(ids: list[str], scores: np.ndarray, k: int, meta: dict[str, _Meta]) -> list[RetrievalHit]:
        order = sorted(range(len(ids)), key=lambda i: (-float(scores[i]), ids[i]))[:k]
        return [
            RetrievalHit(chunk_id=ids[i], doc_id=meta[ids[i]].doc_id, score=float(scores[i]), rank=r + 1)
            for r, i in enumerate(order)
        ]

    def _apply(self, old: _Snapshot, batch: list[IndexEntry]) -> _Snapshot:
        dim = old.dim
        for e in batch:
            for vec_dim in [e.dense.dim if e.dense else None, e.multi.dim if e.multi else None]:
                if vec_dim is None:
                    continue
                if dim is None:
                    dim = vec_dim
                elif vec_dim != dim:
                    raise VectorIndexError(
                        f"{e.retriever_name}: entry {e.chunk_id} dim {vec_dim} != partition dim {dim}"
                    )
        meta = dict(old.meta)
        dense_map = {cid: old.dense[i] for i, cid in enumerate(old.dense_ids)} if old.dense is not None else {}
        multi = dict(old.multi)
        for e in batch:
            meta[e.chunk_id] = _Meta(e.doc_id, e.granularity, e.modality)
            if e.dense is not None:
                dense_map[e.chunk_id] = _normalize(np.asarray(e.dense.values, dtype=np.float32))
            else:
                dense_map.pop(e.chunk_id, None)
            if e.multi is not None:
                multi[e.chunk_id] = _normalize(_mv_array(e.multi))
            else:
                multi.pop(e.chunk_id, None)
        dense_ids = tuple(sorted(dense_map))
        dense = np.stack([dense_map[c] for c in dense_ids]) if dense_ids else None
        snap = _Snapshot(dim=dim, meta=meta, dense_ids=dense_ids, dense=dense, multi=multi)
        if multi:
            cids = tuple(sorted(multi))
            snap.centroid_ids = cids
            snap.centroids = _normalize(np.stack([multi[c].mean(axis=0) for c in cids]))
        return snap

    def _ensure_graph(self, retriever_name: str) -> _Snapshot:
        with self._lock:
            snap = self._snapshot(retriever_name)
            if snap.graph is None and snap.dense is not None:
                snap = replace(snap, graph=_KnnGraph(snap.dense))
                self._partitions[retriever_name] = snap
            return snap

    # -- persistence ---------------------------------------------------------

    def _part_dir(self, name: str) -> Path:
        return self.data_dir / name

    def _persist_partition(self, name: str, snap: _Snapshot, changed_docs: set[str]):
        part_dir = self._part_dir(name)
        (part_dir / "multi").mkdir(parents=True, exist_ok=True)
        with sqlite3.connect(part_dir / "meta.db") as db:
            db.execute(
                "CREATE TABLE IF NOT EXISTS entries ("
                "chunk_id TEXT PRIMARY KEY, doc_id TEXT, granularity TEXT,"
                "modality TEXT, has_dense INTEGER, has_multi INTEGER)"
            )
            db.execute("CREATE TABLE IF NOT EXISTS info (dim INTEGER)")
            db.execute("DELETE FROM entries")
            db.execute("DELETE FROM info")
            db.execute("INSERT INTO info VALUES (?)", (snap.dim,))
            dense_set = set(snap.dense_ids)
            db.executemany(
                "INSERT INTO entries VALUES (?,?,?,?,?,?)",
                [
                    (
                        cid,
                        m.doc_id,
                        m.granularity.value,
                        m.modality.value,
                        int(cid in dense_set),
                        int(cid in snap.multi),
                    )
                    for cid, m in snap.meta.items()
                ],
            )
        tmp = part_dir / "dense.bin.tmp"
        with open(tmp, "wb") as fh:
            n = len(snap.dense_ids)
            fh.write(_DENSE_MAGIC + struct.pack("<IQ", snap.dim or 0, n))
            for cid in snap.dense_ids:
                cid_b = cid.encode("utf-8")
                fh.write(struct.pack("<H", len(cid_b)) + cid_b)
            if snap.dense is not None:
                fh.write(snap.dense.astype("<f4").tobytes())
        tmp.replace(part_dir / "dense.bin")
        docs_with_multi: dict[str, list[str]] = {}
        for cid in snap.multi:
            docs_with_multi.setdefault(snap.meta[cid].doc_id, []).append(cid)
        for doc_id in changed_docs:
            path = part_dir / "multi" / f"{_safe_name(doc_id)}.bin"
            cids = sorted(docs_with_multi.get(doc_id, []))
            if not cids:
                path.unlink(missing_ok=True)
                continue
            with open(path, "wb") as fh:
                fh.write(_MULTI_MAGIC + struct.pack("<II", snap.dim or 0, len(cids)))
                for cid in cids:
                    rows = snap.multi[cid]
                    cid_b = cid.encode("utf-8")
                    fh.write(struct.pack("<HI", len(cid_b), rows.shape[0]) + cid_b)
                    fh.write(rows.astype("<f4").tobytes())

    def _load_partition(self, part_dir: Path) -> _Snapshot:
        with sqlite3.connect(part_dir / "meta.db") as db:
            (dim,) = db.execute("SELECT dim FROM info").fetchone()
            rows = db.execute(
                "SELECT chunk_id, doc_id, granularity, modality, has_dense, has_multi FROM entries"
            ).fetchall()
        meta = {
            cid: _Meta(doc_id, GranularityLevel(gran), Modality(mod))
            for cid, doc_id, gran, mod, _, _ in rows
        }
        dense_ids: tuple[str, ...] = ()
        dense = None
        dense_path = part_dir / "dense.bin"
        if dense_path.is_file():
            buf = dense_path.read_bytes()
            if buf[:8] != _DENSE_MAGIC:
                raise VectorIndexError(f"bad dense file {dense_path}")
            fdim, n = struct.unpack_from("<IQ", buf, 8)
            pos = 8 + 12
            ids = []
            for _ in range(n):
                (ln,) = struct.unpack_from("<H", buf, pos)
                pos += 2
                ids.append(buf[pos : pos + ln].decode("utf-8"))
                pos += ln
            if n:
                dense = np.frombuffer(buf, dtype="<f4", count=n * fdim, offset=pos).reshape(n, fdim).copy()
            dense_ids = tuple(ids)
        multi: dict[str, np.ndarray] = {}
        multi_dir = part_dir / "multi"
        if multi_dir.is_dir():
            for path in sorted(multi_dir.glob("*.bin")):
                buf = path.read_bytes()
                if buf[:8] != _MULTI_MAGIC:
                    raise VectorIndexError(f"bad multi file {path}")
                fdim, n_chunks = struct.unpack_from("<II", buf, 8)
                pos = 16
                for _ in range(n_chunks):
                    ln, n_rows = struct.unpack_from("<HI", buf, pos)
                    pos += 6
                    cid = buf[pos : pos + ln].decode("utf-8")
                    pos += ln
                    rows = (
                        np.frombuffer(buf, dtype="<f4", count=n_rows * fdim, offset=pos)
                        .reshape(n_rows, fdim)
                        .copy()
                    )
                    pos += n_rows * fdim * 4
                    multi[cid] = rows
        snap = _Snapshot(dim=dim, meta=meta, dense_ids=dense_ids, dense=dense, multi=multi)
        if multi:
            cids = tuple(sorted(multi))
            snap.centroid_ids = cids
            snap.centroids = _normalize(np.stack([multi[c].mean(axis=0) for c in cids]))
        return snap


def _safe_name(doc_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in doc_id)
