"""Shared test utilities."""

import numpy as np

from graph_decipher.graph import Dataset, Graph, LabelSet, Split


def relabel(ds: Dataset, split: Split, perm: np.ndarray) -> tuple[Dataset, Split]:
    """Rename node ``i`` to ``perm[i]`` everywhere."""
    perm = np.asarray(perm)
    n = ds.n_nodes
    X = np.empty_like(ds.features)
    X[perm] = ds.features
    y = np.empty(n, dtype=np.int64)
    y[perm] = ds.labels.labels
    ids = [None] * n
    for i, node in enumerate(ds.node_ids):
        ids[perm[i]] = node
    g = Graph(n, perm[ds.graph.edges], has_self_loops=ds.graph.has_self_loops)
    out = Dataset(g, X, LabelSet(y, ds.labels.n_classes), tuple(ids))
    return out, Split(perm[split.train], perm[split.val], perm[split.test])


def distinct_similarities(ds: Dataset, split: Split) -> bool:
    from graph_decipher.fab import partition_by_category, sort_by_similarity
    part = partition_by_category(ds.labels, split, ds.n_nodes)
    for group in part.groups[:-1]:
        if group.size:
            sims = sort_by_similarity(group, ds.features).sims
            if np.unique(sims).size != sims.size:
                return False
    return True
