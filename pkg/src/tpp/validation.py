import numpy as np

from .graph import Graph


def check_graph(graph, require_labels: bool = False) -> Graph:
    if not isinstance(graph, Graph):
        raise TypeError(f"expected a Graph, got {type(graph).__name__}")
    if require_labels and graph.labels is None:
        raise ValueError("graph must carry node labels")
    if not np.all(np.isfinite(graph.features)):
        raise ValueError("graph features must be finite")
    return graph


def check_nodes(nodes, n: int) -> np.ndarray:
    """Validate a node-id set against a graph of ``n`` nodes; returns an int64 array."""
    arr = np.asarray(nodes)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ValueError(f"boolean node mask must have length {n}")
        arr = np.flatnonzero(arr)
    arr = arr.astype(np.int64, copy=False).ravel()
    if arr.size == 0:
        raise ValueError("node set must be nonempty")
    if arr.min() < 0 or arr.max() >= n:
        raise ValueError(f"node ids must lie in [0, {n})")
    if np.unique(arr).size != arr.size:
        raise ValueError("node ids must be distinct")
    return arr
