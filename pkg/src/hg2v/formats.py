"""On-disk formats: TU benchmark directories and the HG2V binary container."""
from __future__ import annotations

import io
import json
import logging
import os
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .graphcore import AttributedGraph, DatasetMeta, degree_features, normalize_features

log = logging.getLogger(__name__)

CONTAINER_MAGIC = b"HG2V"
CONTAINER_VERSION = 1


def _read_table(path: Path, dtype=float) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([dtype(tok) for tok in line.replace(",", " ").split()])
    if not rows:
        return np.zeros((0, 0), dtype=dtype)
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise DataError(f"ragged rows in {path.name}")
    return np.asarray(rows, dtype=dtype)


def _find(dirpath: Path, suffix: str, name: str | None):
    if name is not None:
        p = dirpath / f"{name}_{suffix}.txt"
        return p if p.exists() else None
    hits = sorted(dirpath.glob(f"*_{suffix}.txt"))
    return hits[0] if hits else None


def load_tu_dataset(dirpath, name: str | None = None, normalize: bool = True):
    """Load a TU-format benchmark directory.

    Returns ``(graphs, meta)``. Node labels are one-hot encoded, continuous
    attributes are kept (and standardized when ``normalize``); when both are
    present the result is ``[attributes | one-hot]``. Without either file the
    node degree is used.
    """
    dirpath = Path(dirpath)
    if not dirpath.is_dir():
        raise DataError(f"no such dataset directory: {dirpath}")
    a_path = _find(dirpath, "A", name)
    if a_path is None:
        raise DataError(f"missing mandatory file {name or 'DS'}_A.txt in {dirpath}")
    name = name or a_path.name[: -len("_A.txt")]
    ind_path = _find(dirpath, "graph_indicator", name)
    if ind_path is None:
        raise DataError(f"missing mandatory file {name}_graph_indicator.txt in {dirpath}")

    indicator = _read_table(ind_path, int).ravel()
    n_nodes = indicator.size
    edges = _read_table(a_path, int).reshape(-1, 2) - 1
    if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
        raise DataError(f"{a_path.name} references nodes outside 1..{n_nodes}")

    weights = np.ones(len(edges))
    ea_path = _find(dirpath, "edge_attributes", name)
    if ea_path is not None:
        ea = _read_table(ea_path, float)
        if ea.shape[0] != len(edges):
            raise DataError(f"{ea_path.name} has {ea.shape[0]} rows for {len(edges)} edges")
        if ea.shape[1] == 1 and np.all(ea > 0):
            weights = ea[:, 0]

    blocks = []
    kind = None
    attr_cols = None
    na_path = _find(dirpath, "node_attributes", name)
    if na_path is not None:
        attrs = _read_table(na_path, float)
        if attrs.shape[0] != n_nodes:
            raise DataError(f"{na_path.name} has {attrs.shape[0]} rows, graph indicator has {n_nodes}")
        blocks.append(attrs)
        attr_cols = np.arange(attrs.shape[1])
        kind = "continuous"
    nl_path = _find(dirpath, "node_labels", name)
    if nl_path is not None:
        nl = _read_table(nl_path, int)
        if nl.shape[0] != n_nodes:
            raise DataError(f"{nl_path.name} has {nl.shape[0]} rows, graph indicator has {n_nodes}")
        values, inv = np.unique(nl[:, 0], return_inverse=True)
        blocks.append(np.eye(values.size)[inv])
        kind = "mixed" if kind else "one-hot-label"

    gl_path = _find(dirpath, "graph_labels", name)
    graph_ids, starts = np.unique(indicator, return_index=True)
    if np.any(np.diff(indicator) < 0):
        raise DataError(f"{ind_path.name} is not sorted by graph id")
    labels = None
    label_values = None
    if gl_path is not None:
        raw = _read_table(gl_path, int)[:, 0]
        if raw.size != graph_ids.size:
            raise DataError(f"{gl_path.name} has {raw.size} labels for {graph_ids.size} graphs")
        label_values, labels = np.unique(raw, return_inverse=True)

    feats = np.concatenate(blocks, axis=1) if blocks else None
    ends = np.append(starts[1:], n_nodes)
    owner = np.searchsorted(starts, edges[:, 0], side="right") - 1 if edges.size else np.zeros(0, int)
    if edges.size and np.any(owner != np.searchsorted(starts, edges[:, 1], side="right") - 1):
        raise DataError(f"{a_path.name} contains an edge between different graphs")
    order = np.argsort(owner, kind="stable")
    edges, weights, owner = edges[order], weights[order], owner[order]
    bounds = np.searchsorted(owner, np.arange(graph_ids.size + 1))

    graphs = []
    for gi, (s, e) in enumerate(zip(starts, ends)):
        ge = edges[bounds[gi]:bounds[gi + 1]] - s
        gw = weights[bounds[gi]:bounds[gi + 1]]
        lab = None if labels is None else int(labels[gi])
        g = AttributedGraph.from_edges(int(e - s), ge, None if feats is None else feats[s:e], gw, lab)
        if feats is None:
            g = g.with_features(degree_features(g))
        graphs.append(g)
    if feats is None:
        kind = "degree-fallback"
    if normalize and attr_cols is not None:
        graphs = normalize_features(graphs, columns=attr_cols)

    meta = DatasetMeta(
        name=name,
        num_classes=0 if label_values is None else int(label_values.size),
        feature_dim=graphs[0].feature_dim,
        feature_kind=kind,
        extra={} if label_values is None else {"label_values": label_values.tolist()},
    )
    log.info("loaded %s: %d graphs, feature_dim=%d (%s)", name, len(graphs), meta.feature_dim, kind)
    return graphs, meta


def write_tu_dataset(dirpath, graphs, name: str) -> None:
    """Write graphs as a TU directory (continuous attributes + graph labels)."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    offset = 0
    with open(dirpath / f"{name}_A.txt", "w") as fa, \
            open(dirpath / f"{name}_graph_indicator.txt", "w") as fi, \
            open(dirpath / f"{name}_node_attributes.txt", "w") as fn, \
            open(dirpath / f"{name}_edge_attributes.txt", "w") as fw:
        for gid, g in enumerate(graphs, start=1):
            for (u, v), w in zip(g.edges, g.weights):
                fa.write(f"{u + 1 + offset}, {v + 1 + offset}\n")
                fw.write(f"{float(w)!r}\n")
            for row in g.features:
                fi.write(f"{gid}\n")
                fn.write(", ".join(repr(float(x)) for x in row) + "\n")
            offset += g.n
    if all(g.label is not None for g in graphs):
        with open(dirpath / f"{name}_graph_labels.txt", "w") as fl:
            for g in graphs:
                fl.write(f"{g.label}\n")


# --- binary container -------------------------------------------------------

def _put_graph(buf, g: AttributedGraph) -> None:
    label = -1 if g.label is None else g.label
    buf.write(struct.pack("<IIIBq", g.n, g.num_edges, g.feature_dim, g.label is not None, label))
    buf.write(g.edges.astype("<u4").tobytes())
    buf.write(g.weights.astype("<f8").tobytes())
    buf.write(g.features.astype("<f8").tobytes())


def _take(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise DataError("truncated HG2V container")
    return data


def _get_graph(buf) -> AttributedGraph:
    n, m, f, has_label, label = struct.unpack("<IIIBq", _take(buf, 21))
    edges = np.frombuffer(_take(buf, 8 * m), dtype="<u4").reshape(m, 2).astype(np.int64)
    weights = np.frombuffer(_take(buf, 8 * m), dtype="<f8")
    feats = np.frombuffer(_take(buf, 8 * n * f), dtype="<f8").reshape(n, f)
    return AttributedGraph(n, edges, weights, feats, label if has_label else None)


def write_container(path, graphs, meta: DatasetMeta, pyramids=None, config: dict | None = None) -> None:
    """Serialize graphs (and optionally their pyramids) to an HG2V file.

    Layout: magic ``HG2V``, u16 version, u32 header length, JSON header
    (dataset meta and the resolved run config), u32 graph count, u8 pyramid
    flag, then the graph records. All numbers are little-endian; reals are
    float64 so round trips are bit-exact.
    """
    header = json.dumps({
        "meta": {"name": meta.name, "num_classes": meta.num_classes, "feature_dim": meta.feature_dim,
                 "feature_kind": meta.feature_kind, "extra": meta.extra},
        "config": config or {},
    }, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CONTAINER_MAGIC)
    buf.write(struct.pack("<HI", CONTAINER_VERSION, len(header)))
    buf.write(header)
    buf.write(struct.pack("<IB", len(graphs), pyramids is not None))
    for g in graphs:
        _put_graph(buf, g)
    if pyramids is not None:
        if len(pyramids) != len(graphs):
            raise ValueError("one pyramid per graph required")
        for p in pyramids:
            buf.write(struct.pack("<I", len(p.pools)))
            for lvl in p.levels[1:]:
                _put_graph(buf, lvl)
            for pool in p.pools:
                buf.write(struct.pack("<II", pool.fine_n, pool.coarse_n))
                buf.write(pool.group.astype("<u4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def read_container(path):
    """Inverse of :func:`write_container`: ``(graphs, meta, pyramids, config)``."""
    from .coarsen import PoolingMap, Pyramid

    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if _take(buf, 4) != CONTAINER_MAGIC:
        raise DataError(f"{path}: not an HG2V container (bad magic)")
    version, hlen = struct.unpack("<HI", _take(buf, 6))
    if version != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    header = json.loads(_take(buf, hlen))
    count, has_pyr = struct.unpack("<IB", _take(buf, 5))
    graphs = [_get_graph(buf) for _ in range(count)]
    pyramids = None
    if has_pyr:
        pyramids = []
        for g in graphs:
            (depth,) = struct.unpack("<I", _take(buf, 4))
            levels = [g] + [_get_graph(buf) for _ in range(depth)]
            pools = []
            for _ in range(depth):
                fine_n, coarse_n = struct.unpack("<II", _take(buf, 8))
                group = np.frombuffer(_take(buf, 4 * fine_n), dtype="<u4").astype(np.int64)
                pools.append(PoolingMap(fine_n, coarse_n, group))
            pyramids.append(Pyramid(levels, pools))
    m = header["meta"]
    meta = DatasetMeta(m["name"], m["num_classes"], m["feature_dim"], m["feature_kind"], m.get("extra", {}))
    return graphs, meta, pyramids, header.get("config", {})
