import os
from pathlib import Path

import numpy as np
import pytest

from mrfgcn.factors import PairwiseParams, build_pieces
from mrfgcn.graph import build_graph


def random_graph(rng, num_nodes, edge_prob=0.45):
    pairs = [(j, k) for j in range(num_nodes) for k in range(j + 1, num_nodes)
             if rng.random() < edge_prob]
    return build_graph(num_nodes, pairs)


def random_problem(rng, num_nodes, num_classes, mode="edge", scheme="average",
                   edge_prob=0.45, min_labeled=0):
    """Graph + factors + labels + labeled subset for randomized checks."""
    g = random_graph(rng, num_nodes, edge_prob)
    scores = rng.normal(0.0, 1.5, size=(num_nodes, num_classes))
    raw = rng.normal(0.0, 0.6, size=(num_classes, num_classes))
    if mode == "edge":
        alpha = rng.normal(1.0, 0.5, size=g.num_edges)
    elif mode == "layer":
        alpha = rng.normal(1.0, 0.5, size=1)
    else:
        alpha = np.zeros(0)
    pp = PairwiseParams(raw=raw, alpha=alpha, mode=mode)
    pieces, redist = build_pieces(g, scheme)
    labels = rng.integers(0, num_classes, size=num_nodes).astype(np.int64)
    num_labeled = int(rng.integers(min_labeled, num_nodes))
    train_ids = np.sort(rng.choice(num_nodes, size=num_labeled, replace=False))
    return g, pieces, redist, scores, pp, labels, train_ids


def random_r(rng, num_nodes, num_classes, labels, train_ids):
    r = rng.random((num_nodes, num_classes)) + 0.05
    r /= r.sum(axis=1, keepdims=True)
    r[train_ids] = 0.0
    r[train_ids, labels[train_ids]] = 1.0
    return r


def write_citation(directory, name, content_rows, cite_rows):
    """content_rows: (node_name, feature list, class string); cite_rows: (cited, citing)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{name}.content", "w", encoding="utf-8") as fh:
        for node, feats, cls in content_rows:
            fh.write("\t".join([node, *(str(x) for x in feats), cls]) + "\n")
    with open(directory / f"{name}.cites", "w", encoding="utf-8") as fh:
        for a, b in cite_rows:
            fh.write(f"{a}\t{b}\n")
    return directory


def dataset_dir(name):
    """Path to a real citation dataset, or None when it is not installed."""
    root = Path(os.environ.get("MRFGCN_DATA", Path(__file__).resolve().parent.parent / "data"))
    for candidate in (root / name, root / name.capitalize()):
        if list(candidate.glob("*.content")) or (candidate / "features.tsv").exists():
            return candidate
    return None


def require_dataset(name):
    path = dataset_dir(name)
    if path is None:
        pytest.skip(f"{name} dataset not installed; see README (MRFGCN_DATA) "
                    f"to run this criterion")
    return path
