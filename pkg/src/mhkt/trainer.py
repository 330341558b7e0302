"""Total objective, balanced two-domain batching, training and evaluation.

The model routes each domain through its own encoder and bottleneck, projects
into a shared common space, and classifies there with one shared linear
classifier. The objective is ``lambda1 * TAIS + lambda2 * MDD + CRKT``; any
switched-off module is simply absent from the per-term breakdown.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .ascsim import ScatteringCenter
from .crkt import SoftLabelBank, compute_soft_labels, crkt_loss
from .data import Dataset, load_dataset
from .encoders import GraphEncoder, ImageEncoder, build_graph, collate_graphs, init_fan_in_uniform
from .tais import Bottleneck, tais_loss
from .tgkt import Projection, build_label_structure, mdd_loss

logger = logging.getLogger(__name__)

VARIANTS = ("mhkt", "target_only", "source_finetune", "mmd_baseline", "coral_baseline")
MODULES = ("tais", "tgkt", "crkt")
PAIRINGS = ("class", "random")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 2.0
    beta: float = 1e-3
    alpha: float = 0.06

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")
        if self.alpha >= 1:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")


@dataclass
class TrainConfig:
    data: str | None = None
    labeled_per_class: int = 10  # <= 0 selects the whole target training split
    batch_size: int = 24
    epochs: int = 100
    lr: float = 1e-3
    seed: int = 0
    variant: str = "mhkt"
    tais: bool = True
    tgkt: bool = True
    crkt: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    steps_per_epoch: int | None = None  # default: one pass over the source set
    eval_every: int = 1
    knn: int = 5
    gnn_hidden: int = 64
    gnn_layers: int = 3
    image_size: int = 128
    image_channels: tuple[int, ...] = (16, 32, 64, 64)
    bottleneck_hidden: int = 256
    z_dim: int = 64
    common_dim: int = 128
    temperature: float = 1.0
    pairing: str = "class"
    normalize_common: bool = True  # unit-norm common features inside the alignment losses
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.image_channels = tuple(self.image_channels)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def toggles(self) -> dict[str, bool]:
        """Modules actually active for this variant."""
        if self.variant != "mhkt":
            return dict.fromkeys(MODULES, False)
        return {"tais": self.tais, "tgkt": self.tgkt, "crkt": self.crkt}

    @property
    def uses_source(self) -> bool:
        return self.variant != "target_only"

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_channels"] = list(self.image_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


class MHKTModel(nn.Module):
    def __init__(self, cfg: TrainConfig, n_classes: int):
        super().__init__()
        self.graph_encoder = GraphEncoder(hidden=cfg.gnn_hidden, n_layers=cfg.gnn_layers)
        self.image_encoder = ImageEncoder(cfg.image_size, cfg.image_channels)
        self.source_bottleneck = Bottleneck(self.graph_encoder.out_dim, cfg.bottleneck_hidden, cfg.z_dim)
        self.target_bottleneck = Bottleneck(self.image_encoder.out_dim, cfg.bottleneck_hidden, cfg.z_dim)
        self.projection = Projection(cfg.z_dim, cfg.common_dim)
        self.classifier = nn.Linear(cfg.common_dim, n_classes)
        self.n_classes = n_classes

    def branch(self, domain: str, features: torch.Tensor, stochastic: bool, generator: torch.Generator | None = None) -> dict:
        bottleneck = self.source_bottleneck if domain == "source" else self.target_bottleneck
        if stochastic:
            mu, sigma = bottleneck(features)
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
            z = mu + sigma * eps
        else:
            mu, sigma = bottleneck.mean(features), None
            z = mu
        u = self.projection(z, domain)
        return {"mu": mu, "sigma": sigma, "z": z, "u": u, "logits": self.classifier(u)}

    def source_features(self, X, A, mask) -> torch.Tensor:
        return self.graph_encoder(X, A, mask)

    def target_features(self, images: torch.Tensor) -> torch.Tensor:
        return self.image_encoder(images)

    @torch.no_grad()
    def predict_logits(self, images: torch.Tensor, chunk: int = 256) -> torch.Tensor:
        out = []
        for i in range(0, len(images), chunk):
            out.append(self.branch("target", self.target_features(images[i : i + chunk]), stochastic=False)["logits"])
        return torch.cat(out) if out else torch.zeros((0, self.n_classes))


def build_model(cfg: TrainConfig, n_classes: int) -> MHKTModel:
    gen = torch.Generator().manual_seed(int(cfg.seed))
    model = MHKTModel(cfg, n_classes)
    init_fan_in_uniform(model, gen)
    return model.to(cfg.torch_dtype)


def mmd_baseline_loss(U_s: torch.Tensor, U_t: torch.Tensor) -> torch.Tensor:
    """Linear-kernel MMD^2: squared distance between batch means."""
    if U_s.shape[1] != U_t.shape[1]:
        raise ValueError("feature dimensions differ")
    return ((U_s.mean(dim=0) - U_t.mean(dim=0)) ** 2).sum()


def coral_baseline_loss(U_s: torch.Tensor, U_t: torch.Tensor) -> torch.Tensor:
    """``||cov(U_s) - cov(U_t)||_F^2 / (4 d^2)`` with unbiased covariances."""
    if U_s.shape[1] != U_t.shape[1]:
        raise ValueError("feature dimensions differ")
    if U_s.shape[0] < 2 or U_t.shape[0] < 2:
        raise ValueError("CORAL needs at least 2 samples per domain")
    d = U_s.shape[1]

    def cov(U):
        C = U - U.mean(dim=0, keepdim=True)
        return C.T @ C / (U.shape[0] - 1)

    return ((cov(U_s) - cov(U_t)) ** 2).sum() / (4.0 * d * d)


@dataclass
class Batch:
    """One domain's slice of a training step; ``inputs`` are encoder-ready tensors."""

    inputs: tuple
    labels: torch.Tensor


def total_loss(
    model: MHKTModel,
    batch_s: Batch | None,
    batch_t: Batch,
    weights: LossWeights,
    cfg: TrainConfig,
    bank: SoftLabelBank | None = None,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted objective and its per-term breakdown (entries sum to the total)."""
    on = cfg.toggles
    tgt = model.branch("target", model.target_features(*batch_t.inputs), on["tais"], generator)
    src = None
    if cfg.uses_source:
        if batch_s is None:
            raise ValueError(f"variant {cfg.variant} needs a source batch")
        src = model.branch("source", model.source_features(*batch_s.inputs), on["tais"], generator)

    terms: dict[str, torch.Tensor] = {}
    if on["tais"]:
        logits = torch.cat([src["logits"], tgt["logits"]]) if src else tgt["logits"]
        labels = torch.cat([batch_s.labels, batch_t.labels]) if src else batch_t.labels
        mu = torch.cat([src["mu"], tgt["mu"]]) if src else tgt["mu"]
        sigma = torch.cat([src["sigma"], tgt["sigma"]]) if src else tgt["sigma"]
        terms["tais"] = weights.lambda1 * tais_loss(logits, labels, mu, sigma, weights.beta)
    elif src is not None:
        terms["source_ce"] = F.cross_entropy(src["logits"], batch_s.labels)

    if src is not None:
        u_s, u_t = src["u"], tgt["u"]
        if cfg.normalize_common:
            u_s, u_t = F.normalize(u_s, dim=1), F.normalize(u_t, dim=1)
    if on["tgkt"]:
        y_all = torch.cat([batch_s.labels, batch_t.labels])
        terms["mdd"] = weights.lambda2 * mdd_loss(u_s, u_t, y_all)
    if cfg.variant == "mmd_baseline":
        terms["mmd"] = weights.lambda2 * mmd_baseline_loss(u_s, u_t)
    elif cfg.variant == "coral_baseline":
        terms["coral"] = weights.lambda2 * coral_baseline_loss(u_s, u_t)

    if on["crkt"]:
        if bank is None:
            raise ValueError("CRKT needs a soft-label bank")
        terms["crkt"] = crkt_loss(tgt["logits"], batch_t.labels, bank, weights.alpha)
    else:
        terms["target_ce"] = F.cross_entropy(tgt["logits"], batch_t.labels)

    total = None
    for v in terms.values():
        total = v if total is None else total + v
    return total, terms


def stratified_permutation(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shuffle within each class, then interleave classes round-robin.

    Any contiguous window of the result is close to class-balanced.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    per_class = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    out = []
    for r in range(max(len(p) for p in per_class)):
        for ci in rng.permutation(len(classes)):
            if r < len(per_class[ci]):
                out.append(per_class[ci][r])
    return np.array(out, dtype=np.int64)


class BalancedBatchSampler:
    """Paired source/target index batches from independent stratified shuffles.

    Row ``i`` of a source batch pairs with row ``i`` of the target batch in
    the marginal MDD term. With ``pairing="class"`` each source row is drawn
    from the class of its target row, so every pair is a same-class
    cross-domain pair; ``"random"`` pairs two independent streams. A pool
    smaller than the batch size is cycled, i.e. sampled with replacement.
    """

    def __init__(self, source_labels, target_labels, batch_size: int, rng: np.random.Generator, pairing: str = "class"):
        if pairing not in PAIRINGS:
            raise ValueError(f"unknown pairing {pairing!r}; expected one of {PAIRINGS}")
        self.source_labels = np.asarray(source_labels) if source_labels is not None else None
        self.target_labels = np.asarray(target_labels)
        self.batch_size = batch_size
        self.rng = rng
        self.pairing = pairing
        self.streams: dict[str, list[int]] = {"source": [], "target": []}
        if self.source_labels is not None and pairing == "class":
            missing = set(np.unique(self.target_labels)) - set(np.unique(self.source_labels))
            if missing:
                raise ValueError(f"classes {sorted(missing)} have no source samples to pair with")
            self.streams.update({f"source/{int(c)}": [] for c in np.unique(self.target_labels)})
        for name, labels in (("source", self.source_labels), ("target", self.target_labels)):
            if labels is not None and len(labels) < batch_size:
                logger.warning("%s pool has %d samples < batch size %d; sampling with replacement", name, len(labels), batch_size)

    def _take(self, name: str, labels: np.ndarray) -> np.ndarray:
        stream = self.streams[name]
        while len(stream) < self.batch_size:
            stream.extend(stratified_permutation(labels, self.rng).tolist())
        idx, self.streams[name] = stream[: self.batch_size], stream[self.batch_size :]
        return np.array(idx, dtype=np.int64)

    def _take_class(self, c: int) -> int:
        stream = self.streams[f"source/{c}"]
        if not stream:
            stream.extend(self.rng.permutation(np.flatnonzero(self.source_labels == c)).tolist())
        return stream.pop(0)

    def sample_balanced_batch(self) -> tuple[np.ndarray | None, np.ndarray]:
        tgt = self._take("target", self.target_labels)
        if self.source_labels is None:
            return None, tgt
        if self.pairing == "random":
            return self._take("source", self.source_labels), tgt
        src = np.array([self._take_class(int(c)) for c in self.target_labels[tgt]], dtype=np.int64)
        return src, tgt

    def state_dict(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "streams": {k: list(map(int, v)) for k, v in self.streams.items()}}

    def load_state_dict(self, d: dict) -> None:
        self.rng.bit_generator.state = d["rng"]
        self.streams = {k: list(v) for k, v in d["streams"].items()}


@dataclass
class TrainData:
    """Encoder-ready tensors for one training run."""

    source: tuple | None  # (X, A, mask) for every source graph
    source_labels: np.ndarray | None
    target_images: torch.Tensor
    target_labels: np.ndarray
    test_images: torch.Tensor | None = None
    test_labels: np.ndarray | None = None
    n_classes: int = 0


def prepare_data(
    cfg: TrainConfig,
    source_centers: Sequence[Sequence[ScatteringCenter]] | None,
    source_labels,
    target_images,
    target_labels,
    test_images=None,
    test_labels=None,
    n_classes: int | None = None,
) -> TrainData:
    dt = cfg.torch_dtype
    src = None
    if cfg.uses_source:
        if source_centers is None or len(source_centers) == 0:
            raise ValueError(f"variant {cfg.variant} needs source data")
        src = collate_graphs([build_graph(scs, cfg.knn) for scs in source_centers], dtype=dt)
    y_t = np.asarray(target_labels, dtype=np.int64)
    K = n_classes or int(max(y_t.max(), np.max(source_labels) if source_labels is not None else 0)) + 1
    return TrainData(
        source=src,
        source_labels=np.asarray(source_labels, dtype=np.int64) if src is not None else None,
        target_images=torch.as_tensor(np.asarray(target_images), dtype=dt).unsqueeze(1),
        target_labels=y_t,
        test_images=None if test_images is None else torch.as_tensor(np.asarray(test_images), dtype=dt).unsqueeze(1),
        test_labels=None if test_labels is None else np.asarray(test_labels, dtype=np.int64),
        n_classes=K,
    )


def select_labeled_subset(labels: np.ndarray, per_class: int, seed: int) -> np.ndarray:
    """Indices of ``per_class`` randomly chosen samples of every class (all if <= 0)."""
    labels = np.asarray(labels)
    if per_class <= 0:
        return np.arange(len(labels))
    rng = np.random.default_rng([int(seed), 7919])
    picked = []
    for c in np.unique(labels):
        pool = np.flatnonzero(labels == c)
        if per_class > len(pool):
            raise ValueError(f"class {c} has only {len(pool)} target samples, {per_class} requested")
        picked.append(np.sort(rng.choice(pool, size=per_class, replace=False)))
    return np.concatenate(picked)


@dataclass
class TrainState:
    model: MHKTModel
    optimizer: torch.optim.Optimizer
    sampler: BalancedBatchSampler
    generator: torch.Generator
    bank: SoftLabelBank | None
    epoch: int = 0


def init_state(cfg: TrainConfig, data: TrainData) -> TrainState:
    model = build_model(cfg, data.n_classes)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sampler = BalancedBatchSampler(data.source_labels, data.target_labels, cfg.batch_size, np.random.default_rng([int(cfg.seed), 1]), cfg.pairing)
    gen = torch.Generator().manual_seed(int(cfg.seed) + 1_000_003)
    return TrainState(model, opt, sampler, gen, None, 0)


@torch.no_grad()
def refresh_soft_labels(state: TrainState, data: TrainData, cfg: TrainConfig) -> SoftLabelBank:
    m = state.model
    u = m.branch("source", m.source_features(*data.source), stochastic=False)["u"]
    return compute_soft_labels(u, data.source_labels, m.classifier, data.n_classes, cfg.temperature, state.epoch)


@torch.no_grad()
def evaluate(model: MHKTModel, images: torch.Tensor, labels, n_classes: int | None = None) -> dict:
    """Accuracy, per-class accuracy and confusion matrix (rows: true class)."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("empty evaluation split")
    K = n_classes or model.n_classes
    model.eval()
    pred = model.predict_logits(images).argmax(dim=1).numpy()
    model.train()
    conf = np.zeros((K, K), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    per_class = [float(conf[k, k] / conf[k].sum()) if conf[k].sum() else float("nan") for k in range(K)]
    return {
        "accuracy": float(np.trace(conf) / conf.sum()),
        "per_class_accuracy": per_class,
        "confusion": conf.tolist(),
    }


@dataclass
class TrainResult:
    state: TrainState
    history: list[dict]
    final: dict | None


def _batch(data: TrainData, idx_s, idx_t) -> tuple[Batch | None, Batch]:
    bt = Batch((data.target_images[idx_t],), torch.as_tensor(data.target_labels[idx_t]))
    if idx_s is None:
        return None, bt
    X, A, mask = data.source
    return Batch((X[idx_s], A[idx_s], mask[idx_s]), torch.as_tensor(data.source_labels[idx_s])), bt


def fit(cfg: TrainConfig, data: TrainData, state: TrainState | None = None) -> TrainResult:
    """Run epochs ``state.epoch .. cfg.epochs`` and return the state and metric history."""
    state = state or init_state(cfg, data)
    n_steps = cfg.steps_per_epoch or math.ceil(
        (len(data.source_labels) if data.source_labels is not None else len(data.target_labels)) / cfg.batch_size
    )
    on = cfg.toggles
    history: list[dict] = []
    final = None
    while state.epoch < cfg.epochs:
        if on["crkt"]:
            state.bank = refresh_soft_labels(state, data, cfg)
        sums: dict[str, float] = {}
        for _ in range(n_steps):
            idx_s, idx_t = state.sampler.sample_balanced_batch()
            bs, bt = _batch(data, idx_s, idx_t)
            loss, terms = total_loss(state.model, bs, bt, cfg.weights, cfg, state.bank, state.generator)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {state.epoch}: " + ", ".join(f"{k}={float(v):.4g}" for k, v in terms.items())
                )
            state.optimizer.zero_grad()
            loss.backward()
            state.optimizer.step()
            sums["total"] = sums.get("total", 0.0) + loss.item()
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v.item()
        state.epoch += 1
        record = {"epoch": state.epoch, "loss": {k: v / n_steps for k, v in sums.items()}}
        last = state.epoch == cfg.epochs
        if data.test_images is not None and (last or state.epoch % cfg.eval_every == 0):
            ev = evaluate(state.model, data.test_images, data.test_labels, data.n_classes)
            record["accuracy"] = ev["accuracy"]
            record["per_class_accuracy"] = ev["per_class_accuracy"]
            if last:
                final = ev
        history.append(record)
        logger.info("epoch %d %s", state.epoch, record)
    if final is None and data.test_images is not None:
        final = evaluate(state.model, data.test_images, data.test_labels, data.n_classes)
    return TrainResult(state, history, final)


def load_train_data(cfg: TrainConfig, dataset: Dataset | None = None) -> TrainData:
    ds = dataset or load_dataset(cfg.data)
    labeled = select_labeled_subset(ds.target_labels, cfg.labeled_per_class, cfg.seed)
    return prepare_data(
        cfg,
        ds.source_centers if cfg.uses_source else None,
        ds.source_labels if cfg.uses_source else None,
        ds.target_images[labeled],
        ds.target_labels[labeled],
        ds.test_images if len(ds.test_labels) else None,
        ds.test_labels if len(ds.test_labels) else None,
        n_classes=ds.n_classes,
    )


def train(cfg: TrainConfig, dataset: Dataset | None = None, state: TrainState | None = None) -> TrainResult:
    if cfg.data is None and dataset is None:
        raise ValueError("TrainConfig.data is not set")
    return fit(cfg, load_train_data(cfg, dataset), state)


# --- checkpoints -----------------------------------------------------------

CHECKPOINT_MAGIC = b"MHKTCKPT"
CHECKPOINT_VERSION = 1
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8", torch.uint8: "|u1"}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


def _tensor_entries(state: TrainState) -> list[tuple[str, torch.Tensor]]:
    entries = [(f"model/{k}", v) for k, v in state.model.state_dict().items()]
    names = {id(p): n for n, p in state.model.named_parameters()}
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            for k, v in state.optimizer.state.get(p, {}).items():
                entries.append((f"optim/{names[id(p)]}/{k}", torch.as_tensor(v)))
    entries.append(("rng/torch", state.generator.get_state()))
    return entries


def save_checkpoint(state: TrainState, cfg: TrainConfig, path: str | Path) -> None:
    """Write ``MAGIC | u32 version | u64 header_len | JSON header | tensor blob``.

    The header lists every tensor as ``{name, dtype, shape, offset, nbytes}``
    (offsets relative to the blob start, little-endian, C order) plus the
    epoch, config, sampler RNG state and soft-label bank.
    """
    blob = io.BytesIO()
    tensors = []
    for name, t in _tensor_entries(state):
        t = t.detach().cpu().contiguous()
        arr = t.numpy().astype(_DTYPES[t.dtype], copy=False)
        raw = arr.tobytes()
        tensors.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape), "offset": blob.tell(), "nbytes": len(raw)})
        blob.write(raw)
    header = {
        "epoch": state.epoch,
        "config": cfg.to_dict(),
        "n_classes": state.model.n_classes,
        "sampler": state.sampler.state_dict(),
        "bank": None if state.bank is None else json.loads(state.bank.to_json()),
        "tensors": tensors,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(blob.getvalue())


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not an MHKT checkpoint")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + hlen])
    base = 20 + hlen
    tensors = {}
    for e in header["tensors"]:
        arr = np.frombuffer(raw, dtype=e["dtype"], count=int(np.prod(e["shape"], dtype=np.int64)), offset=base + e["offset"])
        tensors[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy())
    return header, tensors


def load_checkpoint(path: str | Path, data: TrainData | None = None) -> tuple[TrainConfig, TrainState]:
    header, tensors = read_checkpoint(path)
    cfg = TrainConfig.from_dict(header["config"])
    K = header["n_classes"]
    model = build_model(cfg, K)
    model.load_state_dict({k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")})
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    optim_state = {}
    for name, p in model.named_parameters():
        entry = {k.rsplit("/", 1)[1]: v for k, v in tensors.items() if k.startswith(f"optim/{name}/")}
        if entry:
            optim_state[name] = entry
    if optim_state:
        pid = {n: i for i, (n, _) in enumerate(model.named_parameters())}
        opt.load_state_dict({
            "state": {pid[n]: s for n, s in optim_state.items()},
            "param_groups": [{**{k: v for k, v in opt.param_groups[0].items() if k != "params"}, "params": list(range(len(pid)))}],
        })
    labels_s = data.source_labels if data is not None else None
    labels_t = data.target_labels if data is not None else np.zeros(cfg.batch_size, dtype=np.int64)
    sampler = BalancedBatchSampler(labels_s, labels_t, cfg.batch_size, np.random.default_rng(), cfg.pairing)
    sampler.load_state_dict(header["sampler"])
    gen = torch.Generator()
    gen.set_state(tensors["rng/torch"])
    bank = None if header["bank"] is None else SoftLabelBank(np.array(header["bank"]["q"]), header["bank"]["epoch_stamp"])
    return cfg, TrainState(model, opt, sampler, gen, bank, header["epoch"])


# --- run directories ---------------------------------------------------------


def write_confusion(path: Path, confusion) -> None:
    conf = np.asarray(confusion)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + [str(k) for k in range(conf.shape[1])])
    for k, row in enumerate(conf):
        w.writerow([k] + [int(v) for v in row])
    path.write_text(buf.getvalue())


def write_run(result: TrainResult, cfg: TrainConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    with (out / "metrics.jsonl").open("w") as fh:
        for rec in result.history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    save_checkpoint(result.state, cfg, out / "checkpoint.bin")
    if result.final is not None:
        write_confusion(out / "confusion.csv", result.final["confusion"])
        (out / "eval.json").write_text(json.dumps(result.final, indent=2, sort_keys=True) + "\n")
    return out
