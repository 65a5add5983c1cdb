#!/usr/bin/env python3
"""Benchmark the dense index backends: exact flat scan vs k-NN graph.

Measures build time, query latency, and recall@10 of the approximate
backend against the exact one on random vectors.

    python scripts/bench_index.py --n 10000 --dim 64 --queries 200
"""

import argparse
import time

import numpy as np

from docresearch.chunking import GranularityLevel, Modality
from docresearch.gateway import EmbeddingVector
from docresearch.index import IndexEntry, VectorIndex


def entries(ids, X):
    return [
        IndexEntry(chunk_id=cid, doc_id="d", granularity=GranularityLevel.CHUNK,
                   modality=Modality.TEXT, retriever_name="r",
                   dense=EmbeddingVector.of([float(x) for x in v]))
        for cid, v in zip(ids, X)
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=10_000)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--queries", type=int, default=200)
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    X = rng.normal(size=(args.n, args.dim)).astype(np.float32)
    ids = [f"v{i:06d}" for i in range(args.n)]
    queries = [rng.normal(size=args.dim).astype(np.float32) for _ in range(args.queries)]

    exact = VectorIndex()
    t0 = time.monotonic()
    exact.upsert(entries(ids, X))
    print(f"exact  upsert: {time.monotonic() - t0:6.2f}s")

    approx = VectorIndex(backend="approx")
    t0 = time.monotonic()
    approx.upsert(entries(ids, X))
    approx.search_dense(EmbeddingVector.of([float(x) for x in queries[0]]), args.k, retriever_name="r")
    print(f"approx upsert + graph build: {time.monotonic() - t0:6.2f}s")

    def run(index):
        hits_per_query = []
        t0 = time.monotonic()
        for q in queries:
            hits = index.search_dense(
                EmbeddingVector.of([float(x) for x in q]), args.k, retriever_name="r"
            )
            hits_per_query.append({h.chunk_id for h in hits})
        return hits_per_query, (time.monotonic() - t0) / len(queries)

    truth, exact_lat = run(exact)
    got, approx_lat = run(approx)
    recall = float(np.mean([len(t & g) / args.k for t, g in zip(truth, got)]))
    print(f"exact  search: {exact_lat * 1000:6.2f} ms/query")
    print(f"approx search: {approx_lat * 1000:6.2f} ms/query")
    print(f"approx recall@{args.k}: {recall:.4f}")


if __name__ == "__main__":
    main()
