"""Common-space projection and the maximum discrimination divergence (MDD).

MDD sums three terms over a labeled two-domain batch:

* marginal gap: mean squared distance between index-paired source/target rows,
* intra-class spread: ``(2/m1) tr(U^T L_H U)`` with ``L_H`` the same-label
  graph Laplacian,
* inter-class similarity: ``||B * (U U^T)||_F^2 / (2 m2)`` with ``B`` the
  different-label indicator.

Rows of ``U`` are samples throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

DOMAINS = ("source", "target")


class Projection(nn.Module):
    """Independent bias-free linear maps from each domain's z-space to the common space."""

    def __init__(self, z_dim: int = 64, common_dim: int = 128):
        super().__init__()
        self.source = nn.Linear(z_dim, common_dim, bias=False)
        self.target = nn.Linear(z_dim, common_dim, bias=False)

    def forward(self, z: torch.Tensor, domain: str) -> torch.Tensor:
        return project(z, domain, self)


def project(z: torch.Tensor, domain: str, proj: Projection) -> torch.Tensor:
    if domain == "source":
        return proj.source(z)
    if domain == "target":
        return proj.target(z)
    raise ValueError(f"unknown domain tag {domain!r}; expected one of {DOMAINS}")


@dataclass
class LabelStructure:
    W: np.ndarray
    B: np.ndarray
    D: np.ndarray
    L_H: np.ndarray
    m1: int
    m2: int


def build_label_structure(y) -> LabelStructure:
    """Similarity/dissimilarity matrices, Laplacian, and ordered-pair counts.

    ``m1`` counts ordered pairs ``i != j`` with equal labels, ``m2`` ordered
    pairs with different labels.
    """
    y = np.asarray(y).reshape(-1)
    W = (y[:, None] == y[None, :]).astype(np.float64)
    B = 1.0 - W
    D = np.diag(W.sum(axis=0))
    n = len(y)
    return LabelStructure(W=W, B=B, D=D, L_H=D - W, m1=int(W.sum()) - n, m2=int(B.sum()))


def _as_matrix(ref: torch.Tensor, a: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(a, dtype=ref.dtype, device=ref.device)


def marginal_term(U_s: torch.Tensor, U_t: torch.Tensor) -> torch.Tensor:
    if U_s.shape[0] != U_t.shape[0]:
        raise ValueError(f"source and target batches must be the same size, got {U_s.shape[0]} and {U_t.shape[0]}")
    return ((U_s - U_t) ** 2).sum(dim=1).mean()


def intra_class_term(U: torch.Tensor, ls: LabelStructure) -> torch.Tensor:
    if ls.m1 == 0:
        return U.sum() * 0.0
    L = _as_matrix(U, ls.L_H)
    return (2.0 / ls.m1) * torch.trace(U.T @ L @ U)


def inter_class_term(U: torch.Tensor, ls: LabelStructure) -> torch.Tensor:
    if ls.m2 == 0:
        return U.sum() * 0.0
    B = _as_matrix(U, ls.B)
    return ((B * (U @ U.T)) ** 2).sum() / (2.0 * ls.m2)


def mdd_terms(U_s: torch.Tensor, U_t: torch.Tensor, y_all, ls: LabelStructure | None = None) -> dict[str, torch.Tensor]:
    U = torch.cat([U_s, U_t], dim=0)
    if ls is None:
        ls = build_label_structure(np.asarray(y_all))
    if ls.W.shape[0] != U.shape[0]:
        raise ValueError("label vector length must equal the number of stacked rows")
    return {
        "marginal": marginal_term(U_s, U_t),
        "intra": intra_class_term(U, ls),
        "inter": inter_class_term(U, ls),
    }


def mdd_loss(U_s: torch.Tensor, U_t: torch.Tensor, y_all, ls: LabelStructure | None = None) -> torch.Tensor:
    """Unweighted sum of the three MDD terms; ``y_all`` labels ``[U_s; U_t]``."""
    terms = mdd_terms(U_s, U_t, y_all, ls)
    return terms["marginal"] + terms["intra"] + terms["inter"]
