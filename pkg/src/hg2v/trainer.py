"""Hierarchical embedding model: Krylov level functions, pair construction, JSD loss and training."""
from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from . import ndiff as nd
from .coarsen import PoolingMap, Pyramid, align_pyramid, build_pyramids
from .errors import DataError, NumericalError, ShapeError
from .ndiff import Tensor

log = logging.getLogger(__name__)

MODES = ("full", "no_coarsen", "wl_loukas_baseline")
MODEL_MAGIC = b"HG2M"
MODEL_VERSION = 1


@dataclass
class HyperParams:
    d: int = 16
    a: int = 2
    L: int = 3
    epochs: int = 10
    batch_graphs: int = 8
    lr0: float = 1e-3
    seed: int = 0
    ratio: float = 0.5
    k: int = 10
    same_graph_negatives: bool = False

    def __post_init__(self):
        if self.d < 1 or self.a < 0 or self.L < 1:
            raise ValueError(f"invalid hyperparameters d={self.d}, a={self.a}, L={self.L}")
        if self.epochs < 0 or self.batch_graphs < 1:
            raise ValueError("epochs must be >= 0 and batch_graphs >= 1")


@dataclass
class KrylovStage:
    theta1: Tensor  # ((a+1) d_in) x d, pooled branch
    theta2: Tensor  # d x d
    theta3: Tensor  # 1 x d bias
    theta4: Tensor  # ((a+1) d_in) x d, local branch

    def tensors(self):
        return [self.theta1, self.theta2, self.theta3, self.theta4]


@dataclass
class ModelParams:
    stages: List[KrylovStage]
    hyper: HyperParams
    feature_dim: int

    def parameters(self) -> list:
        return [t for s in self.stages for t in s.tensors()]

    def stage_shapes(self) -> list:
        return _stage_shapes(self.feature_dim, self.hyper)

    @property
    def embedding_dim(self) -> int:
        return 2 * self.hyper.L * self.hyper.d

    def save(self, path) -> None:
        """Write the binary checkpoint: header then theta1..theta4 per stage."""
        h = self.hyper
        out = bytearray(MODEL_MAGIC)
        out += struct.pack("<HIIII", MODEL_VERSION, h.d, h.a, h.L, self.feature_dim)
        for t in self.parameters():
            out += t.data.astype("<f8").tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path, hyper: Optional[HyperParams] = None) -> "ModelParams":
        raw = Path(path).read_bytes()
        if raw[:4] != MODEL_MAGIC:
            raise DataError(f"{path}: not an HG2M checkpoint")
        version, d, a, L, fdim = struct.unpack("<HIIII", raw[4:22])
        if version != MODEL_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        hyper = HyperParams(**{**(asdict(hyper) if hyper else {}), "d": d, "a": a, "L": L})
        pos = 22
        stages = []
        for shapes in _stage_shapes(fdim, hyper):
            ts = []
            for shape in shapes:
                size = shape[0] * shape[1]
                chunk = raw[pos:pos + 8 * size]
                if len(chunk) != 8 * size:
                    raise DataError(f"{path}: truncated checkpoint")
                ts.append(Tensor(np.frombuffer(chunk, dtype="<f8").reshape(shape), requires_grad=True))
                pos += 8 * size
            stages.append(KrylovStage(*ts))
        if pos != len(raw):
            raise DataError(f"{path}: trailing bytes in checkpoint")
        return cls(stages, hyper, fdim)


def _stage_shapes(feature_dim: int, hyper: HyperParams) -> list:
    shapes = []
    d_in = feature_dim
    for _ in range(hyper.L):
        kdim = (hyper.a + 1) * d_in
        shapes.append([(kdim, hyper.d), (hyper.d, hyper.d), (1, hyper.d), (kdim, hyper.d)])
        d_in = hyper.d
    return shapes


def init_model(feature_dim: int, hyper: HyperParams, seed: Optional[int] = None) -> ModelParams:
    """Glorot-uniform initialization of every stage tensor."""
    rng = np.random.default_rng(hyper.seed if seed is None else seed)
    stages = []
    for shapes in _stage_shapes(feature_dim, hyper):
        ts = []
        for fan_in, fan_out in shapes:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            ts.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True))
        stages.append(KrylovStage(*ts))
    return ModelParams(stages, hyper, feature_dim)


def zero_model(feature_dim: int, hyper: HyperParams) -> ModelParams:
    model = init_model(feature_dim, hyper)
    for t in model.parameters():
        t.data[:] = 0.0
    return model


# --- level functions --------------------------------------------------------

def krylov_features(gl, adj, a: int) -> Tensor:
    """``[g, A g, A^2 g, ..., A^a g]`` built by repeated sparse products."""
    gl = nd._as_tensor(gl)
    if adj.shape != (gl.shape[0], gl.shape[0]):
        raise ShapeError(f"krylov_features: adjacency {adj.shape} vs node matrix {gl.shape}")
    blocks = [gl]
    cur = gl
    for _ in range(a):
        cur = nd.matmul(adj, cur)
        blocks.append(cur)
    return blocks[0] if a == 0 else nd.concat_cols(blocks)


def level_forward(stage: KrylovStage, gl, adj, group, coarse_n: int):
    """Local embeddings ``x`` and pooled next-level node matrix ``g_next``."""
    k = krylov_features(gl, adj, len_order(stage, gl))
    x = nd.tanh(nd.matmul(k, stage.theta4))
    pooled = nd.group_sum_rows(nd.tanh(nd.matmul(k, stage.theta1)), group, coarse_n)
    g_next = nd.add(nd.matmul(pooled, stage.theta2), stage.theta3)
    return x, g_next


def len_order(stage: KrylovStage, gl) -> int:
    d_in = nd._as_tensor(gl).shape[1]
    rows = stage.theta1.shape[0]
    if rows % d_in:
        raise ShapeError(f"stage expects a multiple of {rows} input columns, got {d_in}")
    return rows // d_in - 1


# --- batching ---------------------------------------------------------------

@dataclass
class BatchLevel:
    adj: sp.csr_matrix
    group: np.ndarray  # global fine -> global coarse index
    coarse_n: int
    graph_of_fine: np.ndarray
    graph_of_coarse: np.ndarray


@dataclass
class Batch:
    features: np.ndarray
    levels: List[BatchLevel]
    node_counts: list  # per level, per graph
    ids: list = field(default_factory=list)


def make_batch(pyramids, features=None, ids=None) -> Batch:
    """Stack aligned pyramids into block-diagonal per-level operators."""
    depth = {p.depth for p in pyramids}
    if len(depth) != 1:
        raise ValueError("all pyramids in a batch must share one depth")
    depth = depth.pop()
    feats = features if features is not None else [p.levels[0].features for p in pyramids]
    levels = []
    counts = []
    for lv in range(depth + 1):
        counts.append([p.levels[lv].n for p in pyramids])
    for lv in range(depth):
        fine_off = np.cumsum([0] + counts[lv][:-1])
        coarse_off = np.cumsum([0] + counts[lv + 1][:-1])
        group = np.concatenate([p.pools[lv].group + co for p, co in zip(pyramids, coarse_off)])
        levels.append(BatchLevel(
            adj=sp.block_diag([p.norm_adj(lv) for p in pyramids], format="csr"),
            group=group,
            coarse_n=int(sum(counts[lv + 1])),
            graph_of_fine=np.repeat(np.arange(len(pyramids)), counts[lv]),
            graph_of_coarse=np.repeat(np.arange(len(pyramids)), counts[lv + 1]),
        ))
    return Batch(np.concatenate(feats, axis=0), levels, counts, list(ids or []))


@dataclass
class PairSet:
    pos_fine: np.ndarray
    pos_coarse: np.ndarray
    neg_mask: np.ndarray  # fine x coarse boolean

    @property
    def n_pos(self) -> int:
        return int(self.pos_fine.size)

    @property
    def n_neg(self) -> int:
        return int(self.neg_mask.sum())

    def negatives(self):
        return np.argwhere(self.neg_mask)


def make_pairs(level: BatchLevel, same_graph_negatives: bool = False) -> PairSet:
    """Positive pairs ``(u, P(u))`` and the cross-graph negative pairs of one level."""
    n_fine = level.graph_of_fine.size
    if n_fine == 0:
        raise ValueError("empty batch")
    mask = level.graph_of_fine[:, None] != level.graph_of_coarse[None, :]
    if same_graph_negatives:
        same = ~mask
        same[np.arange(n_fine), level.group] = False
        mask = mask | same
    if not mask.any():
        warnings.warn("batch yields no negative pairs (single graph?)", RuntimeWarning, stacklevel=2)
    return PairSet(np.arange(n_fine), level.group.copy(), mask)


def jsd_from_scores(pos_scores, neg_scores=None, neg_mask=None) -> Tensor:
    """``-(mean log sigma(pos) + mean log sigma(-neg))``; the negative mean is over ``neg_mask``."""
    pos_scores = nd._as_tensor(pos_scores)
    if pos_scores.data.size == 0:
        raise ValueError("jsd loss needs at least one positive pair")
    terms = [nd.mean_all(nd.log_sigmoid(pos_scores))]
    if neg_scores is not None:
        neg_scores = nd._as_tensor(neg_scores)
        mask = np.ones(neg_scores.shape, dtype=bool) if neg_mask is None else neg_mask
        if mask.any():
            terms.append(nd.masked_mean(nd.log_sigmoid(nd.neg(neg_scores)), mask))
        else:
            warnings.warn("no negative pairs; using the positive term only", RuntimeWarning, stacklevel=2)
    return nd.neg(nd.sum_scalars(terms))


def jsd_level_loss(x, g_next, pairs: PairSet) -> Tensor:
    pos = nd.rowwise_dot(nd.gather_rows(x, pairs.pos_fine), nd.gather_rows(g_next, pairs.pos_coarse))
    if not pairs.neg_mask.any():
        return jsd_from_scores(pos, np.zeros((0, 0)), np.zeros((0, 0), dtype=bool))
    scores = nd.matmul(x, nd.transpose(g_next))
    return jsd_from_scores(pos, scores, pairs.neg_mask)


def forward_batch(model: ModelParams, batch: Batch, features=None):
    """Run every level; returns ``(xs, gs)`` with ``gs[0]`` the input features."""
    if len(batch.levels) != model.hyper.L:
        raise ShapeError(f"batch has {len(batch.levels)} levels, model expects {model.hyper.L}")
    g = nd._as_tensor(batch.features if features is None else features)
    if g.shape[1] != model.feature_dim:
        raise ShapeError(f"feature dim {g.shape[1]} does not match model feature dim {model.feature_dim}")
    xs, gs = [], [g]
    for stage, lv in zip(model.stages, batch.levels):
        x, g = level_forward(stage, g, lv.adj, lv.group, lv.coarse_n)
        xs.append(x)
        gs.append(g)
    return xs, gs


def batch_loss(model: ModelParams, batch: Batch, features=None, per_level: Optional[list] = None) -> Tensor:
    xs, gs = forward_batch(model, batch, features)
    losses = []
    for lvl, (x, lv) in enumerate(zip(xs, batch.levels)):
        pairs = make_pairs(lv, model.hyper.same_graph_negatives)
        losses.append(jsd_level_loss(x, gs[lvl + 1], pairs))
    if per_level is not None:
        per_level.extend(t.item() for t in losses)
    return nd.sum_scalars(losses)


# --- training ---------------------------------------------------------------

@dataclass
class TrainLog:
    batch_losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)  # per-epoch lists of batch losses
    lrs: list = field(default_factory=list)

    @property
    def first_batch_loss(self) -> float:
        return self.batch_losses[0]


def identity_pyramid(g, depth: int) -> Pyramid:
    return align_pyramid(Pyramid([g], []), depth)


def prepare_pyramids(graphs, hyper: HyperParams, mode: str = "full", pyramids=None, workers: int = 1):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "wl_loukas_baseline":
        raise ValueError("the WL + coarsening baseline is not a GNN mode; use evaluation.graph2vec_loukas")
    if mode == "no_coarsen":
        return [identity_pyramid(g, hyper.L) for g in graphs]
    if pyramids is None:
        return build_pyramids(graphs, hyper.L, hyper.ratio, hyper.k, workers=workers)
    return [align_pyramid(p, hyper.L) for p in pyramids]


def train(graphs, hyper: HyperParams, mode: str = "full", pyramids=None, workers: int = 1,
          model: Optional[ModelParams] = None):
    """Unsupervised training; returns ``(model, TrainLog)``.

    Each epoch visits the graphs in a fresh random order in batches of
    ``batch_graphs`` (last batch may be short). The batch loss is the sum of
    the per-level JSD losses, minimized with Adam under the geometric
    learning-rate decay.
    """
    if not graphs:
        raise ValueError("no graphs to train on")
    pyrs = prepare_pyramids(graphs, hyper, mode, pyramids, workers)
    fdim = graphs[0].feature_dim
    if any(g.feature_dim != fdim for g in graphs):
        raise DataError("inconsistent feature dimensions")
    rng = np.random.default_rng(hyper.seed)
    model = model or init_model(fdim, hyper, seed=int(rng.integers(2**63)))
    params = model.parameters()
    state = nd.AdamState.for_params(params)
    n_batches = math.ceil(len(graphs) / hyper.batch_graphs)
    total = max(1, hyper.epochs * n_batches)
    tlog = TrainLog()
    step = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(graphs))
        losses = []
        for b in range(n_batches):
            ids = order[b * hyper.batch_graphs:(b + 1) * hyper.batch_graphs]
            batch = make_batch([pyrs[i] for i in ids], ids=ids.tolist())
            lr = nd.lr_schedule(step, total, hyper.lr0)
            for p in params:
                p.zero_grad()
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    with nd.Tape() as tape:
                        loss = batch_loss(model, batch)
                    tape.backward(loss)
            except NumericalError as exc:
                raise NumericalError(f"training aborted at epoch {epoch}, step {step}, lr={lr:.3g}, "
                                     f"batch graphs {ids.tolist()}: {exc}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss at step {step}, lr={lr:.3g}, batch {ids.tolist()}")
            nd.adam_step(params, [p.grad for p in params], state, lr)
            losses.append(value)
            tlog.batch_losses.append(value)
            tlog.lrs.append(lr)
            step += 1
        tlog.epoch_losses.append(losses)
        log.info("epoch %d/%d mean loss %.5f", epoch + 1, hyper.epochs, float(np.mean(losses)))
    return model, tlog


# --- inference --------------------------------------------------------------

def node_outputs(model: ModelParams, pyramid: Pyramid, features=None) -> list:
    """All per-level node matrices ``[x^0, g^1, x^1, g^2, ...]`` for one graph."""
    batch = make_batch([pyramid], None if features is None else [features])
    xs, gs = forward_batch(model, batch)
    out = []
    for x, g in zip(xs, gs[1:]):
        out.extend([x.data, g.data])
    return out


def embed_batch(model: ModelParams, pyramids) -> np.ndarray:
    """Embeddings ``[sum g^l, max g^l]_{l=1..L}`` for a list of aligned pyramids."""
    batch = make_batch(pyramids)
    _, gs = forward_batch(model, batch)
    out = np.empty((len(pyramids), model.embedding_dim))
    d = model.hyper.d
    for lvl in range(1, model.hyper.L + 1):
        rows = gs[lvl].data
        starts = np.cumsum([0] + batch.node_counts[lvl][:-1])
        base = 2 * d * (lvl - 1)
        out[:, base:base + d] = np.add.reduceat(rows, starts, axis=0)
        out[:, base + d:base + 2 * d] = np.maximum.reduceat(rows, starts, axis=0)
    return out


def embed_graph(model: ModelParams, pyramid: Pyramid) -> np.ndarray:
    if pyramid.depth != model.hyper.L:
        raise ShapeError(f"pyramid depth {pyramid.depth} != model depth {model.hyper.L}")
    return embed_batch(model, [pyramid])[0]


def embed_dataset(model: ModelParams, pyramids, chunk: int = 64) -> np.ndarray:
    pyramids = [align_pyramid(p, model.hyper.L) for p in pyramids]
    parts = [embed_batch(model, pyramids[i:i + chunk]) for i in range(0, len(pyramids), chunk)]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, model.embedding_dim))
