"""Initial feature extractors for the two domains.

Scattering-center sets become kNN graphs encoded by a mean-aggregation
message-passing network into 128-D structured features; images go through
an all-convolutional stack whose flattened output is 3136-D at 128x128.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .ascsim import ScatteringCenter

SOURCE_FEATURE_DIM = 128
TARGET_FEATURE_DIM = 3136
NODE_FEATURES = ("A", "L", "alpha", "x", "y", "z", "is_distributed")


@dataclass
class Graph:
    node_features: np.ndarray  # (n_nodes, 7)
    edges: np.ndarray  # (n_edges, 2) directed (src, dst) pairs

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = self.n_nodes
        if self.node_features.ndim != 2 or self.node_features.shape[1] != len(NODE_FEATURES):
            raise ValueError(f"node_features must be (n, {len(NODE_FEATURES)})")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise ValueError("edge index out of range")

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_nodes, self.n_nodes))
        A[self.edges[:, 0], self.edges[:, 1]] = 1.0
        return A


def knn_edges(points: np.ndarray, k: int) -> np.ndarray:
    """Directed edges from each point to itself and its ``k`` nearest neighbours.

    ``k`` is clamped to ``n - 1``. Ties are broken by index.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    k = max(0, min(int(k), n - 1))
    d = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    edges = [(i, i) for i in range(n)]
    if k:
        nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
        edges += [(i, int(j)) for i in range(n) for j in nbrs[i]]
    return np.array(edges, dtype=np.int64)


def build_graph(scs: Sequence[ScatteringCenter], k: int = 5) -> Graph:
    """Symmetrized kNN graph over 3-D center positions, with self-loops."""
    if len(scs) == 0:
        raise ValueError("need at least one scattering center")
    if k < 1:
        raise ValueError("k must be >= 1")
    params = np.array([sc.as_tuple() for sc in scs], dtype=np.float64)
    amp, length, alpha = params[:, 0], params[:, 1], params[:, 2]
    pos = params[:, 4:7] - params[:, 4:7].mean(axis=0)
    peak = amp.max()
    amp = amp / peak if peak > 0 else amp
    feats = np.column_stack([amp, length, alpha, pos, (length > 0).astype(np.float64)])

    directed = knn_edges(pos, k)
    pairs = set(map(tuple, directed.tolist())) | {(j, i) for i, j in directed.tolist()}
    edges = np.array(sorted(pairs), dtype=np.int64)
    return Graph(feats, edges)


def collate_graphs(graphs: Sequence[Graph], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pad a list of graphs into dense batch tensors.

    Returns node features (B, N, F), row-normalized adjacency (B, N, N) and a
    node mask (B, N).
    """
    B = len(graphs)
    N = max(g.n_nodes for g in graphs)
    X = np.zeros((B, N, len(NODE_FEATURES)))
    A = np.zeros((B, N, N))
    mask = np.zeros((B, N))
    for b, g in enumerate(graphs):
        n = g.n_nodes
        X[b, :n] = g.node_features
        adj = g.adjacency()
        A[b, :n, :n] = adj / adj.sum(axis=1, keepdims=True)
        mask[b, :n] = 1.0
    return (torch.as_tensor(X, dtype=dtype), torch.as_tensor(A, dtype=dtype), torch.as_tensor(mask, dtype=dtype))


def init_fan_in_uniform(module: nn.Module, generator: torch.Generator) -> None:
    """He-style uniform init, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            fan_in = m.weight[0].numel()
            bound = math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                m.weight.copy_(torch.rand(m.weight.shape, generator=generator, dtype=m.weight.dtype) * 2 * bound - bound)
                if m.bias is not None:
                    m.bias.zero_()


class GraphEncoder(nn.Module):
    """Mean-aggregation message passing, global mean pooling, linear head."""

    def __init__(self, in_dim: int = len(NODE_FEATURES), hidden: int = 64, n_layers: int = 3, out_dim: int = SOURCE_FEATURE_DIM):
        super().__init__()
        dims = [in_dim] + [hidden] * n_layers
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.head = nn.Linear(hidden, out_dim)
        self.out_dim = out_dim

    def forward(self, X: torch.Tensor, A: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = X
        for layer in self.layers:
            h = torch.relu(A @ layer(h)) * mask.unsqueeze(-1)
        pooled = h.sum(dim=1) / mask.sum(dim=1, keepdim=True)
        return self.head(pooled)


class ImageEncoder(nn.Module):
    """All-convolutional image encoder.

    Four 4x4 stride-2 convolutions halve the input each time, then a 2x2
    valid convolution; 128x128 inputs give 7x7x64 = 3136 features.
    """

    def __init__(self, input_size: int = 128, channels: Sequence[int] = (16, 32, 64, 64), final_channels: int | None = None):
        super().__init__()
        if input_size % 16:
            raise ValueError("input_size must be divisible by 16")
        final_channels = final_channels or channels[-1]
        layers: list[nn.Module] = []
        c_in = 1
        for c in channels:
            layers += [nn.Conv2d(c_in, c, kernel_size=4, stride=2, padding=1), nn.ReLU()]
            c_in = c
        layers += [nn.Conv2d(c_in, final_channels, kernel_size=2, stride=1), nn.ReLU()]
        self.features = nn.Sequential(*layers)
        self.input_size = input_size
        side = input_size // 2 ** len(channels) - 1
        self.out_dim = final_channels * side * side

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(1)
        if tuple(images.shape[-2:]) != (self.input_size, self.input_size):
            raise ValueError(f"expected {self.input_size}x{self.input_size} images, got {tuple(images.shape[-2:])}")
        return self.features(images).flatten(1)


def encode_graph(g: Graph, encoder: GraphEncoder) -> torch.Tensor:
    if not np.all(np.isfinite(g.node_features)):
        raise ValueError("graph has non-finite node features")
    p = next(encoder.parameters())
    X, A, mask = collate_graphs([g], dtype=p.dtype)
    return encoder(X, A, mask)[0]


def encode_image(img, encoder: ImageEncoder) -> torch.Tensor:
    p = next(encoder.parameters())
    x = img if torch.is_tensor(img) else torch.as_tensor(np.asarray(img), dtype=p.dtype)
    if x.dim() != 2:
        raise ValueError("encode_image expects a single H x W image")
    return encoder(x[None, None])[0]
