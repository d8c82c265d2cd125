"""GraphSAGE-style message passing with edge features, in plain numpy.

Each message-passing block computes

    h' = dropout(relu([h, mean_{u in N(v)} h_u, mean_{e in E(v)} x_e] @ W + b)) (+ h)

with the identity skip added whenever input and output widths agree. Edge
features are not updated between blocks. A small MLP head with a sigmoid
output turns the final embedding into a per-node probability.

Gradients are derived by hand; ``tests/test_gnn.py`` checks them against
central finite differences.
"""

from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dataset import GraphSample, build_features
from .hazard import FailureField
from .network import Network

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"BRNGNN\x00\x01"


class GnnError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise GnnError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise GnnError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise GnnError("invalid Adam constants")
        if not 0 <= self.val_fraction < 1:
            raise GnnError("val_fraction must lie in [0, 1)")


@dataclass
class GnnModel:
    params: dict[str, np.ndarray]
    layers: int = 5
    head_layers: int = 3
    hidden: int = 64
    node_in: int = 4
    edge_in: int = 1
    dropout: float = 0.1
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(4))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(4))
    train_config: TrainConfig | None = None

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.node_in] + [self.hidden] * self.layers
        return [(dims[k], dims[k + 1]) for k in range(self.layers)]

    def head_dims(self) -> list[tuple[int, int]]:
        dims = [self.hidden] * self.head_layers + [1]
        return [(dims[j], dims[j + 1]) for j in range(self.head_layers)]

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for k, (d_in, d_out) in enumerate(self.layer_dims()):
            shapes[f"mp{k}.W"] = (2 * d_in + self.edge_in, d_out)
            shapes[f"mp{k}.b"] = (d_out,)
        for j, (d_in, d_out) in enumerate(self.head_dims()):
            shapes[f"head{j}.W"] = (d_in, d_out)
            shapes[f"head{j}.b"] = (d_out,)
        return shapes

    def copy(self) -> "GnnModel":
        return copy.deepcopy(self)


def init_model(seed: int = 0, *, layers: int = 5, head_layers: int = 3, hidden: int = 64,
               node_in: int = 4, edge_in: int = 1, dropout: float = 0.1) -> GnnModel:
    """Glorot-uniform weights, zero biases."""
    model = GnnModel({}, layers, head_layers, hidden, node_in, edge_in, dropout)
    rng = np.random.default_rng(seed)
    for name, shape in model.expected_shapes().items():
        if name.endswith(".W"):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            model.params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            model.params[name] = np.zeros(shape)
    return model


# -- graph operators -----------------------------------------------------------

def _row_mean(rows, cols, n_rows, n_cols) -> sp.csr_matrix:
    data = np.ones(len(rows))
    m = sp.csr_matrix((data, (rows, cols)), shape=(n_rows, n_cols))
    counts = np.asarray(m.sum(axis=1)).ravel()
    scale = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    return sp.diags(scale) @ m


def mean_adjacency(adjacency, n: int) -> sp.csr_matrix:
    """Row-normalised neighbour operator; empty rows stay zero."""
    rows = [v for v, nb in enumerate(adjacency) for _ in nb]
    cols = [u for nb in adjacency for u, _ in nb]
    return _row_mean(rows, cols, n, n).tocsr()


def mean_incidence(adjacency, n: int, n_edges: int) -> sp.csr_matrix:
    rows = [v for v, nb in enumerate(adjacency) for _ in nb]
    cols = [k for nb in adjacency for _, k in nb]
    return _row_mean(rows, cols, n, n_edges).tocsr()


def aggregate_neighbors(x: np.ndarray, adjacency) -> np.ndarray:
    """Mean of neighbour rows; ``adjacency[v]`` lists ``(neighbor, edge)`` pairs."""
    return mean_adjacency(adjacency, len(x)) @ x


def aggregate_edges(x_e: np.ndarray, adjacency) -> np.ndarray:
    """Mean of incident edge feature rows."""
    x_e = np.asarray(x_e, dtype=float).reshape(len(x_e), -1)
    return mean_incidence(adjacency, len(adjacency), len(x_e)) @ x_e


_OPS: dict[str, tuple[sp.csr_matrix, sp.csr_matrix]] = {}


def graph_operators(net: Network):
    key = net.fingerprint
    if key not in _OPS:
        _OPS[key] = (mean_adjacency(net.adjacency, net.n_nodes),
                     mean_incidence(net.adjacency, net.n_nodes, net.n_edges))
    return _OPS[key]


@dataclass(eq=False)
class GraphBatch:
    """Several graphs stacked into one block-diagonal graph."""

    x: np.ndarray  # standardised node features
    edge_agg: np.ndarray  # mean incident edge features per node
    adj: sp.csr_matrix
    labels: np.ndarray | None = None
    mask: np.ndarray | None = None  # per-node loss weight
    sizes: tuple[int, ...] = ()

    @property
    def n_nodes(self) -> int:
        return len(self.x)


_BLOCKS: dict[tuple[str, int], sp.csr_matrix] = {}


def _block_adj(nets) -> sp.csr_matrix:
    keys = {n.fingerprint for n in nets}
    if len(keys) == 1:
        key = (next(iter(keys)), len(nets))
        if key not in _BLOCKS:
            if len(_BLOCKS) > 64:
                _BLOCKS.clear()
            _BLOCKS[key] = sp.kron(sp.identity(len(nets), format="csr"),
                                   graph_operators(nets[0])[0], format="csr")
        return _BLOCKS[key]
    return sp.block_diag([graph_operators(n)[0] for n in nets], format="csr")


def standardize(model: GnnModel, x_n: np.ndarray) -> np.ndarray:
    return (x_n - model.feature_mean) / model.feature_std


def make_batch(model: GnnModel, samples, with_labels: bool = True) -> GraphBatch:
    nets = [s.net for s in samples]
    if any(n is None for n in nets):
        raise GnnError("samples must carry their network to be batched")
    x = np.vstack([standardize(model, s.node_features) for s in samples])
    e = np.vstack([graph_operators(s.net)[1] @ s.edge_features for s in samples])
    labels = np.concatenate([s.labels for s in samples]) if with_labels else None
    return GraphBatch(x, e, _block_adj(nets), labels, None,
                      tuple(s.net.n_nodes for s in samples))


def single_graph_batch(model: GnnModel, net: Network, x_n, x_e, labels=None) -> GraphBatch:
    adj, inc = graph_operators(net)
    x_e = np.asarray(x_e, dtype=float).reshape(net.n_edges, -1)
    if x_n.shape != (net.n_nodes, model.node_in) or x_e.shape[1] != model.edge_in:
        raise GnnError(f"feature shapes {x_n.shape}/{x_e.shape} do not match model")
    return GraphBatch(standardize(model, x_n), inc @ x_e, adj,
                      None if labels is None else np.asarray(labels, float), None,
                      (net.n_nodes,))


# -- forward / backward ---------------------------------------------------------

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: GnnModel, batch: GraphBatch, mode: str = "eval", rng=None,
            dropout: float | None = None):
    """Per-node predictions in (0, 1) plus the activation cache for backward."""
    if mode not in ("train", "eval"):
        raise GnnError(f"mode must be 'train' or 'eval', got {mode!r}")
    if batch.x.shape[1] != model.node_in or batch.edge_agg.shape[1] != model.edge_in:
        raise GnnError("batch feature widths do not match the model")
    p_drop = model.dropout if dropout is None else dropout
    use_dropout = mode == "train" and p_drop > 0
    if use_dropout and rng is None:
        rng = np.random.default_rng()
    P = model.params
    h = batch.x
    cache = {"layers": [], "head": []}
    for k, (d_in, d_out) in enumerate(model.layer_dims()):
        W = P[f"mp{k}.W"]
        nb = batch.adj @ h
        # [h, nb, e] @ W without materialising the concatenation
        z = h @ W[:d_in] + nb @ W[d_in:2 * d_in] + batch.edge_agg @ W[2 * d_in:] + P[f"mp{k}.b"]
        a = np.maximum(z, 0.0)
        mask = None
        if use_dropout:
            mask = (rng.random(a.shape) >= p_drop) / (1.0 - p_drop)
            a = a * mask
        skip = d_in == d_out
        cache["layers"].append((h, nb, z, mask, skip, d_in))
        h = a + h if skip else a
    for j in range(model.head_layers):
        z = h @ P[f"head{j}.W"] + P[f"head{j}.b"]
        cache["head"].append((h, z))
        h = np.maximum(z, 0.0) if j < model.head_layers - 1 else z
    pred = _sigmoid(h[:, 0])
    cache["pred"] = pred
    return pred, cache


def loss_l1(pred, labels, mask=None) -> float:
    pred = np.asarray(pred, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if pred.shape != labels.shape:
        raise GnnError(f"length mismatch: {pred.shape} vs {labels.shape}")
    err = np.abs(pred - labels)
    if mask is None:
        return float(err.mean())
    mask = np.asarray(mask, dtype=float)
    return float((err * mask).sum() / mask.sum())


def loss_l1_grad(pred, labels, mask=None) -> np.ndarray:
    g = np.sign(pred - labels)
    if mask is None:
        return g / len(pred)
    return g * mask / mask.sum()


def backward(model: GnnModel, batch: GraphBatch, cache, grad_pred) -> dict[str, np.ndarray]:
    """Reverse-mode pass; returns d(loss)/d(param) for every parameter."""
    P = model.params
    grads = {}
    pred = cache["pred"]
    g = (grad_pred * pred * (1.0 - pred))[:, None]
    for j in reversed(range(model.head_layers)):
        h_in, z = cache["head"][j]
        if j < model.head_layers - 1:
            g = g * (z > 0)
        grads[f"head{j}.W"] = h_in.T @ g
        grads[f"head{j}.b"] = g.sum(axis=0)
        g = g @ P[f"head{j}.W"].T
    adj_t = batch.adj.T.tocsr()
    for k in reversed(range(model.layers)):
        h_in, nb, z, mask, skip, d_in = cache["layers"][k]
        W = P[f"mp{k}.W"]
        g_skip = g if skip else None
        if mask is not None:
            g = g * mask
        g = g * (z > 0)
        grads[f"mp{k}.W"] = np.vstack([h_in.T @ g, nb.T @ g, batch.edge_agg.T @ g])
        grads[f"mp{k}.b"] = g.sum(axis=0)
        g_nb = g @ W[d_in:2 * d_in].T
        g = g @ W[:d_in].T + adj_t @ g_nb
        if g_skip is not None:
            g = g + g_skip
    return grads


# -- optimisation ------------------------------------------------------------------

class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1


def evaluate_loss(model: GnnModel, samples, batch_size: int = 64) -> float:
    total, count = 0.0, 0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch = make_batch(model, chunk)
        pred, _ = forward(model, batch, "eval")
        total += np.abs(pred - batch.labels).sum()
        count += len(pred)
    return float(total / count)


def train(model: GnnModel, samples: list[GraphSample], cfg: TrainConfig = TrainConfig(),
          val_samples: list[GraphSample] | None = None):
    """Mini-batch Adam on the L1 loss; returns the best-validation snapshot.

    When ``val_samples`` is not given, ``cfg.val_fraction`` of the samples
    (chosen by the seed) is held out for snapshot selection.
    """
    if not samples:
        raise GnnError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    samples = list(samples)
    if val_samples is None:
        n_val = int(np.ceil(cfg.val_fraction * len(samples))) if len(samples) > 1 else 0
        order = rng.permutation(len(samples))
        val_samples = [samples[i] for i in order[:n_val]]
        samples = [samples[i] for i in sorted(order[n_val:])]
    model = model.copy()
    model.train_config = cfg
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    hist = TrainHistory()
    best_loss, best_params = np.inf, None
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        total, count = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            chunk = [samples[j] for j in order[i:i + cfg.batch_size]]
            batch = make_batch(model, chunk)
            pred, cache = forward(model, batch, "train", rng)
            total += np.abs(pred - batch.labels).sum()
            count += len(pred)
            grads = backward(model, batch, cache, loss_l1_grad(pred, batch.labels))
            opt.step(model.params, grads)
        hist.train_loss.append(float(total / count))
        score = evaluate_loss(model, val_samples) if val_samples else hist.train_loss[-1]
        hist.val_loss.append(score)
        if score < best_loss:
            best_loss = score
            best_params = {k: v.copy() for k, v in model.params.items()}
            hist.best_epoch = epoch
        if epoch % 20 == 0 or epoch == cfg.epochs - 1:
            logger.debug("epoch %d train %.4f val %.4f", epoch, hist.train_loss[-1], score)
    model.params = best_params
    return model, hist


def predict_samples(model: GnnModel, samples, batch_size: int = 64) -> list[np.ndarray]:
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch = make_batch(model, chunk, with_labels=False)
        pred, _ = forward(model, batch, "eval")
        out.extend(np.split(pred, np.cumsum(batch.sizes)[:-1]))
    return out


def predict(model: GnnModel, net: Network, field: FailureField, t: int) -> np.ndarray:
    """Connectivity probability to ``t`` for every node, from the surrogate."""
    x_n, x_e = build_features(net, field, t)
    pred, _ = forward(model, single_graph_batch(model, net, x_n, x_e), "eval")
    return pred


# -- checkpoints ---------------------------------------------------------------------

def save_model(model: GnnModel, path) -> None:
    """Header (JSON) followed by little-endian float64 parameter blocks."""
    names = sorted(model.params)
    header = {
        "version": 1,
        "architecture": {"layers": model.layers, "head_layers": model.head_layers,
                         "hidden": model.hidden, "node_in": model.node_in,
                         "edge_in": model.edge_in, "dropout": model.dropout},
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "feature_mean": [float(v) for v in model.feature_mean],
        "feature_std": [float(v) for v in model.feature_std],
        "train_config": asdict(model.train_config) if model.train_config else None,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_model(path) -> GnnModel:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise GnnError(f"{path}: not a model checkpoint")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    if header.get("version") != 1:
        raise GnnError(f"{path}: unsupported checkpoint version {header.get('version')}")
    arch = header["architecture"]
    model = GnnModel({}, **arch)
    expected = model.expected_shapes()
    offset = 16 + hlen
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        if expected.get(t["name"]) != shape:
            raise GnnError(f"{path}: tensor {t['name']} has shape {shape}, "
                           f"expected {expected.get(t['name'])}")
        size = int(np.prod(shape)) * 8
        model.params[t["name"]] = np.frombuffer(
            data[offset:offset + size], dtype="<f8").reshape(shape).astype(float)
        offset += size
    if set(model.params) != set(expected) or offset != len(data):
        raise GnnError(f"{path}: checkpoint tensors do not match the architecture")
    model.feature_mean = np.array(header["feature_mean"])
    model.feature_std = np.array(header["feature_std"])
    if header.get("train_config"):
        model.train_config = TrainConfig(**header["train_config"])
    return model
