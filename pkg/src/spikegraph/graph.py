"""Skeleton graphs, adjacency normalisation, learnable adjacency powers and
top-k neighbour selection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError
from .numerics import Parameter


@dataclass(frozen=True)
class SkeletonGraph:
    V: int
    edges: tuple[tuple[int, int], ...]
    parent: tuple[int, ...] | None = None
    name: str = "custom"

    def __post_init__(self):
        for u, v in self.edges:
            if not (0 <= u < self.V and 0 <= v < self.V):
                raise DataError(f"edge ({u}, {v}) out of range for V={self.V}")
        if self.parent is not None and len(self.parent) != self.V:
            raise DataError(f"parent table has {len(self.parent)} entries, expected {self.V}")
        if self.V > 1 and not self.is_connected():
            warnings.warn(f"skeleton graph {self.name!r} is not connected", stacklevel=2)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.V, self.V))
        for u, v in self.edges:
            if u != v:
                a[u, v] = a[v, u] = 1.0
        return a

    def is_connected(self) -> bool:
        a = self.adjacency()
        seen = {0}
        frontier = [0]
        while frontier:
            u = frontier.pop()
            for w in np.flatnonzero(a[u]):
                if w not in seen:
                    seen.add(int(w))
                    frontier.append(int(w))
        return len(seen) == self.V

    def permuted(self, perm) -> "SkeletonGraph":
        """Relabel joints so that old joint ``perm[i]`` becomes joint ``i``."""
        inv = np.argsort(perm)
        edges = tuple((int(inv[u]), int(inv[v])) for u, v in self.edges)
        parent = None
        if self.parent is not None:
            parent = tuple(int(inv[self.parent[p]]) for p in perm)
        return SkeletonGraph(self.V, edges, parent, self.name)


def parse_graph(text: str, name: str = "custom") -> SkeletonGraph:
    """Parse the plain-text graph format.

    First non-comment line is V, then one ``u v`` edge per line, then an
    optional ``parent:`` line followed by ``child parent`` pairs.
    """
    lines = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines:
        raise DataError("empty graph file")
    try:
        V = int(lines[0][1])
    except ValueError:
        raise DataError(f"line {lines[0][0]}: expected joint count, got {lines[0][1]!r}") from None
    edges, parents, in_parent = [], {}, False
    for lineno, ln in lines[1:]:
        if ln.lower().startswith("parent:"):
            in_parent = True
            continue
        parts = ln.split()
        if len(parts) != 2:
            raise DataError(f"line {lineno}: expected two integers, got {ln!r}")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"line {lineno}: expected two integers, got {ln!r}") from None
        if not (0 <= a < V and 0 <= b < V):
            raise DataError(f"line {lineno}: joint index out of range for V={V}")
        if in_parent:
            parents[a] = b
        else:
            edges.append((a, b))
    parent = None
    if in_parent:
        if sorted(parents) != list(range(V)):
            raise DataError("parent block must list every joint exactly once")
        parent = tuple(parents[v] for v in range(V))
    return SkeletonGraph(V, tuple(edges), parent, name)


def load_graph(path_or_name: str | Path) -> SkeletonGraph:
    """Load ``ntu``/``ntu25``, ``ucla``/``ucla20`` or a graph file path."""
    builtin = {"ntu": "ntu25.txt", "ntu25": "ntu25.txt", "ucla": "ucla20.txt", "ucla20": "ucla20.txt"}
    key = str(path_or_name).lower()
    if key in builtin:
        text = resources.files("spikegraph.data").joinpath(builtin[key]).read_text()
        return parse_graph(text, builtin[key].removesuffix(".txt"))
    path = Path(path_or_name)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    return parse_graph(text, path.stem)


def normalize_adjacency(a) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ContractError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise ContractError("adjacency must have a zero diagonal")
    a_tilde = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d[:, None] * a_tilde * d[None, :]


def init_pa(a_norm, n: int, dtype=np.float32) -> Parameter:
    """Stack of the first ``n`` powers of the normalised adjacency (A^0 = I)."""
    if n < 1:
        raise ContractError("need at least one relation slice")
    v = a_norm.shape[0]
    slices = [np.eye(v)]
    for _ in range(1, n):
        slices.append(slices[-1] @ a_norm)
    return Parameter(np.stack(slices).astype(dtype))


def topology_score(pa) -> np.ndarray:
    """Elementwise sum over relation slices of |pa[n]|; entry [u, v] is source u -> target v."""
    pa = pa.value if isinstance(pa, Parameter) else np.asarray(pa)
    return np.abs(pa).sum(axis=0)


def boost_diagonal(scores) -> np.ndarray:
    """Set every diagonal entry to its column maximum plus one."""
    scores = np.array(scores, dtype=np.float64)
    v = scores.shape[-1]
    col_max = scores.max(axis=-2)
    idx = np.arange(v)
    scores[..., idx, idx] = col_max + 1.0
    return scores


def topk_neighbors(scores, k: int, self_boost: bool = True) -> np.ndarray:
    """For each target column v, the k source rows with the largest scores.

    Returns integer indices shaped ``(..., V, k)`` ordered by descending
    score; ties go to the lower joint index. Leading axes of ``scores``
    (batch, time) are preserved.
    """
    scores = np.asarray(scores, dtype=np.float64)
    v = scores.shape[-1]
    if not 1 <= k <= v:
        raise ContractError(f"k={k} must lie in [1, {v}]")
    if self_boost:
        scores = boost_diagonal(scores)
    order = np.argsort(-scores, axis=-2, kind="stable")[..., :k, :]
    return np.swapaxes(order, -1, -2)


def selection_matrix(neighbors, v: int, dtype=np.float32) -> np.ndarray:
    """Count matrix M[..., u, j] = #{r : neighbors[..., j, r] == u}."""
    neighbors = np.asarray(neighbors)
    lead = neighbors.shape[:-2]
    n = int(np.prod(lead)) if lead else 1
    nb = neighbors.reshape(n, v, -1)
    j = np.arange(v)[None, :, None]
    flat = (np.arange(n)[:, None, None] * v * v + nb * v + j).ravel()
    counts = np.bincount(flat, minlength=n * v * v)
    return counts.reshape(lead + (v, v)).astype(dtype)
