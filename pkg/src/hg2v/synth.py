"""Synthetic graph families, diffusion-limited aggregation and image-to-graph conversion."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .graphcore import AttributedGraph

TOPOLOGIES = ("cycle", "tree3", "wheel", "ladder")


def gen_topology(kind: str, n: int, seed=None) -> AttributedGraph:
    """One of the four reference topologies with a constant feature column.

    With an integer ``seed`` node ids are shuffled (the topology itself is
    fixed by ``kind`` and ``n``).
    """
    if n < 4:
        raise ValueError("topologies need n >= 4")
    if kind == "cycle":
        u = np.arange(n)
        edges = np.stack([u, (u + 1) % n], axis=1)
    elif kind == "tree3":
        child = np.arange(1, n)
        edges = np.stack([(child - 1) // 3, child], axis=1)
    elif kind == "wheel":
        rim = np.arange(1, n)
        nxt = np.where(rim == n - 1, 1, rim + 1)
        edges = np.concatenate([np.stack([np.zeros_like(rim), rim], axis=1),
                                np.stack([rim, nxt], axis=1)])
    elif kind == "ladder":
        if n % 2:
            raise ValueError("ladder needs an even node count")
        h = n // 2
        a = np.arange(h - 1)
        edges = np.concatenate([np.stack([a, a + 1], axis=1),
                                np.stack([a + h, a + h + 1], axis=1),
                                np.stack([np.arange(h), np.arange(h) + h], axis=1)])
    else:
        raise ValueError(f"unknown topology {kind!r}; choose from {TOPOLOGIES}")
    g = AttributedGraph.from_edges(n, edges, np.ones((n, 1)))
    if seed is not None:
        g = g.permute(np.random.default_rng(seed).permutation(n))
    return g


def removal_order(g: AttributedGraph, seed) -> np.ndarray:
    """Uniformly random ordering of edge indices."""
    return np.random.default_rng(seed).permutation(g.num_edges)


def perturb_edges(g: AttributedGraph, k: int, seed) -> AttributedGraph:
    """Remove ``k`` distinct edges chosen uniformly without replacement."""
    if not 0 <= k <= g.num_edges:
        raise ValueError(f"cannot remove {k} edges from a graph with {g.num_edges}")
    if k == 0:
        return g
    return g.remove_edges(removal_order(g, seed)[:k])


@dataclass(frozen=True)
class DlaConfig:
    n_nodes: int = 500
    stickiness: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.stickiness <= 1.0:
            raise ValueError("stickiness must lie in (0, 1]")
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")


_CHUNK = 32
_CONTACT = 1.0  # two particle radii


def gen_dla(cfg: DlaConfig) -> AttributedGraph:
    """Off-lattice diffusion-limited aggregation cluster as a tree.

    Walkers start on a circle of radius ``cluster_radius + 5`` and take unit
    steps in uniformly random directions; a walker farther than three spawn
    radii is discarded and relaunched. Whenever a walker is within one
    particle diameter of the cluster it sticks with probability
    ``stickiness`` (bonding to the closest particle), otherwise it keeps
    walking. Node features are the particle coordinates.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_nodes
    pos = np.zeros((n, 2))
    edges = []
    cluster_r = 0.0
    for i in range(1, n):
        placed = False
        while not placed:
            spawn = cluster_r + 5.0
            kill = 3.0 * spawn
            phi = rng.uniform(0.0, 2.0 * math.pi)
            cur = spawn * np.array([math.cos(phi), math.sin(phi)])
            while True:
                ang = rng.uniform(0.0, 2.0 * math.pi, _CHUNK)
                u = rng.uniform(0.0, 1.0, _CHUNK)
                traj = cur + np.cumsum(np.stack([np.cos(ang), np.sin(ang)], axis=1), axis=0)
                out = np.hypot(traj[:, 0], traj[:, 1]) > kill
                first_out = int(np.argmax(out)) if out.any() else _CHUNK
                near = np.flatnonzero(np.hypot(*(pos[:i] - cur).T) < _CHUNK + _CONTACT)
                first_stick = _CHUNK
                if near.size:
                    d = np.hypot(traj[:, None, 0] - pos[near, 0], traj[:, None, 1] - pos[near, 1])
                    stick = (d.min(axis=1) < _CONTACT) & (u < cfg.stickiness)
                    if stick.any():
                        first_stick = int(np.argmax(stick))
                if first_stick < _CHUNK and first_stick < first_out:
                    t = first_stick
                    pos[i] = traj[t]
                    edges.append((int(near[np.argmin(d[t])]), i))
                    cluster_r = max(cluster_r, float(np.hypot(*pos[i])))
                    placed = True
                    break
                if first_out < _CHUNK:
                    break
                cur = traj[-1]
    return AttributedGraph.from_edges(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2), pos)


def dla_dataset(count: int, n_nodes: int, seed: int = 0, stickiness=(1.0, 0.05)) -> list:
    """Balanced two-class DLA dataset: class ``c`` uses ``stickiness[c]``."""
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(count):
        cls = i % len(stickiness)
        g = gen_dla(DlaConfig(n_nodes, stickiness[cls], int(rng.integers(2**63))))
        graphs.append(g.with_label(cls))
    return graphs


def image_to_graph(pixels, threshold: float = 0.0, strict: bool = True, label=None) -> AttributedGraph:
    """Graph of the surviving pixels of a grayscale image.

    A pixel survives when its luminosity is ``> threshold`` (``strict``) or
    ``>= threshold``. Features are ``(luminosity, x, y)`` with ``x`` the
    column and ``y`` the row; surviving pixels that touch in the
    8-neighborhood are joined by unit-weight edges.
    """
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    keep = img > threshold if strict else img >= threshold
    ys, xs = np.nonzero(keep)
    if ys.size == 0:
        raise DataError("no pixel survives the threshold; empty graph")
    h, w = img.shape
    index = -np.ones((h, w), dtype=np.int64)
    index[ys, xs] = np.arange(ys.size)
    edges = []
    for dy, dx in ((0, 1), (1, -1), (1, 0), (1, 1)):
        y2, x2 = ys + dy, xs + dx
        ok = (y2 >= 0) & (y2 < h) & (x2 >= 0) & (x2 < w)
        tgt = np.full(ys.size, -1)
        tgt[ok] = index[y2[ok], x2[ok]]
        hit = tgt >= 0
        edges.append(np.stack([np.flatnonzero(hit), tgt[hit]], axis=1))
    feats = np.stack([img[ys, xs], xs.astype(float), ys.astype(float)], axis=1)
    return AttributedGraph.from_edges(ys.size, np.concatenate(edges), feats, label=label)


# --- IDX container ----------------------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Raw IDX array (any element type, any rank)."""
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0 or data[2] not in _IDX_TYPES:
        raise DataError(f"{path}: bad IDX magic")
    dtype = np.dtype(_IDX_TYPES[data[2]])
    ndim = data[3]
    if len(data) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    count = int(np.prod(shape)) if shape else 0
    body = data[4 + 4 * ndim:]
    if len(body) < count * dtype.itemsize:
        raise DataError(f"{path}: truncated IDX payload ({len(body)} bytes for {count} items)")
    return np.frombuffer(body, dtype=dtype, count=count).reshape(shape)


def load_idx_images(path) -> list:
    """Images from an IDX file; ubyte data is scaled to [0, 1]."""
    arr = read_idx(path)
    if arr.ndim != 3:
        raise DataError(f"{path}: expected a rank-3 image tensor, got rank {arr.ndim}")
    if arr.dtype == np.dtype(">u1"):
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64)
    return [img for img in arr]


def load_idx_labels(path) -> np.ndarray:
    return read_idx(path).astype(np.int64).ravel()


def write_idx(path, array) -> None:
    """Write an IDX file; uint8 arrays as ubyte, everything else as float64."""
    arr = np.asarray(array)
    code = 0x08 if arr.dtype == np.uint8 else 0x0E
    if code == 0x0E:
        arr = arr.astype(">f8")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    payload = header + arr.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "wb") as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def images_to_graphs(images, labels=None, threshold: float = 0.0, strict: bool = True) -> list:
    out = []
    for i, img in enumerate(images):
        out.append(image_to_graph(img, threshold, strict, None if labels is None else int(labels[i])))
    return out
