"""HO-AGCN: adaptive graph convolution blocks with keypoint attention.

Each block is ``AGC -> ReLU -> SKA``. An AGC layer computes

    F_out = sum_k (A_k + B_k + C_k) F_in W_k   (+ F_in when C_in == C_out)

with ``A_k`` the fixed normalized partition adjacency, ``B_k`` a learned
offset (zero at init) and ``C_k = softmax(F_in Z_k E_k^T F_in^T)`` a
per-sample similarity. SKA gates channels with
``sigmoid(hardswish(mean_nodes(g) W_a) W_b)``.

All forwards accept ``(N, C)`` or batched ``(B, N, C)`` inputs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .hograph import GraphConfig, adjacency_stack, build_graph
from .tensor import Tensor

LOGIT_CLAMP = 30.0
CHECKPOINT_FORMAT = "hokem-checkpoint"
CHECKPOINT_VERSION = 1


class ModelConfigError(ValueError):
    pass


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _param(value, name: str) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


class AGCLayer:
    def __init__(
        self,
        adjacency: np.ndarray,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        learn_offsets: bool = True,
        data_driven: bool = True,
        residual: Optional[bool] = None,
        embed_dim: Optional[int] = None,
    ):
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.ndim != 3 or adjacency.shape[1] != adjacency.shape[2]:
            raise ModelConfigError(f"adjacency must be (K, N, N), got {adjacency.shape}")
        self.A = [Tensor(a) for a in adjacency]
        self.k_v, self.n_nodes = adjacency.shape[0], adjacency.shape[1]
        self.c_in, self.c_out = c_in, c_out
        self.embed_dim = embed_dim or max(c_out // 4, 4)
        self.residual = (c_in == c_out) if residual is None else residual
        if self.residual and c_in != c_out:
            raise ModelConfigError("residual needs c_in == c_out")

        # each output sums K_v subset products, so all of them count toward fan-in
        self.W = [_param(_uniform(rng, self.k_v * c_in, (c_in, c_out)), f"W.{k}") for k in range(self.k_v)]
        n = self.n_nodes
        self.B = [_param(np.zeros((n, n)), f"B.{k}") for k in range(self.k_v)] if learn_offsets else None
        if data_driven:
            e = self.embed_dim
            self.zeta = [_param(_uniform(rng, c_in, (c_in, e)), f"zeta.{k}") for k in range(self.k_v)]
            self.eta = [_param(_uniform(rng, c_in, (c_in, e)), f"eta.{k}") for k in range(self.k_v)]
        else:
            self.zeta = self.eta = None

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = [(f"W.{k}", w) for k, w in enumerate(self.W)]
        if self.B is not None:
            out += [(f"B.{k}", b) for k, b in enumerate(self.B)]
        if self.zeta is not None:
            out += [(f"zeta.{k}", z) for k, z in enumerate(self.zeta)]
            out += [(f"eta.{k}", e) for k, e in enumerate(self.eta)]
        return out

    def similarity(self, f_in: Tensor, k: int) -> Tensor:
        """Row-softmaxed embedded similarity ``C_k``."""
        q = T.matmul(f_in, self.zeta[k])
        kt = T.transpose(T.matmul(f_in, self.eta[k]))
        return T.softmax_rows(T.matmul(q, kt))

    def __call__(self, f_in) -> Tensor:
        f_in = T.as_tensor(f_in)
        if f_in.shape[-2:] != (self.n_nodes, self.c_in):
            raise T.DimensionError(
                f"AGC expects (..., {self.n_nodes}, {self.c_in}) input, got {f_in.shape}"
            )
        out = None
        for k in range(self.k_v):
            mix = self.A[k]
            if self.B is not None:
                mix = mix + self.B[k]
            if self.zeta is not None:
                mix = mix + self.similarity(f_in, k)
            term = T.matmul(mix, T.matmul(f_in, self.W[k]))
            out = term if out is None else out + term
        if self.residual:
            out = out + f_in
        return out


class SKALayer:
    """Pooled two-layer gate over channels (or over nodes with ``axis='node'``)."""

    def __init__(self, channels: int, rng: np.random.Generator, axis: str = "channel", n_nodes: int = None):
        if axis not in ("channel", "node"):
            raise ModelConfigError(f"unknown SKA axis {axis!r}")
        self.axis = axis
        if axis == "channel":
            if channels % 4:
                raise ModelConfigError(f"SKA channels must be divisible by 4, got {channels}")
            width, hidden = channels, channels // 4
        else:
            width, hidden = n_nodes, max(n_nodes // 4, 1)
        self.channels = channels
        self.W_a = _param(_uniform(rng, width, (width, hidden)), "W_a")
        self.W_b = _param(_uniform(rng, hidden, (hidden, width)), "W_b")

    def named_parameters(self):
        return [("W_a", self.W_a), ("W_b", self.W_b)]

    def attention(self, g_in: Tensor) -> Tensor:
        if self.axis == "channel":
            pooled = T.mean(g_in, axis=-2, keepdims=True)  # (..., 1, C)
            return T.sigmoid(T.matmul(T.hardswish(T.matmul(pooled, self.W_a)), self.W_b))
        pooled = T.transpose(T.mean(g_in, axis=-1, keepdims=True))  # (..., 1, N)
        gate = T.sigmoid(T.matmul(T.hardswish(T.matmul(pooled, self.W_a)), self.W_b))
        return T.transpose(gate)  # (..., N, 1)

    def __call__(self, g_in) -> Tensor:
        g_in = T.as_tensor(g_in)
        if self.axis == "channel" and g_in.shape[-1] != self.channels:
            raise T.DimensionError(f"SKA expects {self.channels} channels, got {g_in.shape}")
        return T.mul(g_in, self.attention(g_in))


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 24
    channels: Tuple[int, ...] = (64, 64, 64, 128, 128, 256)
    in_channels: int = 4
    ska: str = "every"  # every | last | none
    ska_axis: str = "channel"
    learn_offsets: bool = True
    data_driven: bool = True
    residual: bool = True
    graph: GraphConfig = field(default_factory=GraphConfig)
    class_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.ska not in ("every", "last", "none"):
            raise ModelConfigError(f"ska placement must be every/last/none, got {self.ska!r}")
        if not self.channels:
            raise ModelConfigError("need at least one block")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise ModelConfigError("class_names length differs from n_classes")

    def to_json(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["graph"] = self.graph.to_json()
        d["class_names"] = list(self.class_names) if self.class_names else None
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        d["graph"] = GraphConfig.from_json(d.get("graph", {}))
        if d.get("class_names") is not None:
            d["class_names"] = tuple(d["class_names"])
        return cls(**d)


def plain_gcn_config(n_classes: int, channels=(64, 64, 64), **kw) -> ModelConfig:
    """Fixed-topology GCN: no learned offsets, no similarity branch, no attention."""
    return ModelConfig(
        n_classes=n_classes, channels=tuple(channels), ska="none", learn_offsets=False, data_driven=False, **kw
    )


class HOAGCNModel:
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0, adjacency: np.ndarray = None):
        self.config = config
        if adjacency is None:
            adjacency = adjacency_stack(build_graph(config.graph), config.graph.beta).normalized
        self.adjacency = np.asarray(adjacency, dtype=np.float64)
        n_nodes = self.adjacency.shape[1]
        rng = np.random.default_rng(seed)

        self.blocks = []
        c_in = config.in_channels
        last = len(config.channels) - 1
        for i, c_out in enumerate(config.channels):
            agc = AGCLayer(
                self.adjacency,
                c_in,
                c_out,
                rng,
                learn_offsets=config.learn_offsets,
                data_driven=config.data_driven,
                residual=config.residual and c_in == c_out,
            )
            want_ska = config.ska == "every" or (config.ska == "last" and i == last)
            ska = SKALayer(c_out, rng, axis=config.ska_axis, n_nodes=n_nodes) if want_ska else None
            self.blocks.append((agc, ska))
            c_in = c_out
        self.head_W = _param(_uniform(rng, c_in, (c_in, config.n_classes)), "head.W")
        self.head_b = _param(np.zeros(config.n_classes), "head.b")

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        """Parameters in checkpoint order: blocks in depth order, then the head."""
        out = []
        for i, (agc, ska) in enumerate(self.blocks):
            out += [(f"blocks.{i}.agc.{n}", p) for n, p in agc.named_parameters()]
            if ska is not None:
                out += [(f"blocks.{i}.ska.{n}", p) for n, p in ska.named_parameters()]
        out += [("head.W", self.head_W), ("head.b", self.head_b)]
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def embed(self, features) -> Tensor:
        h = T.as_tensor(features)
        for agc, ska in self.blocks:
            h = T.relu(agc(h))
            if ska is not None:
                h = ska(h)
        return h

    def logits(self, features) -> Tensor:
        pooled = T.mean(self.embed(features), axis=-2, keepdims=True)  # (..., 1, C)
        z = T.matmul(pooled, self.head_W) + self.head_b
        return T.clamp(z, -LOGIT_CLAMP, LOGIT_CLAMP)

    def __call__(self, features) -> Tensor:
        """Class probabilities, shape ``(N_c,)`` or ``(B, N_c)``."""
        features = T.as_tensor(features)
        probs = T.sigmoid(self.logits(features))
        shape = (self.config.n_classes,) if features.ndim == 2 else (features.shape[0], self.config.n_classes)
        return _reshape(probs, shape)

    def predict(self, features: np.ndarray, batch_size: int = 256) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 2:
            return self(features).numpy()
        chunks = [self(features[i : i + batch_size]).data for i in range(0, len(features), batch_size)]
        return np.concatenate(chunks) if chunks else np.zeros((0, self.config.n_classes))

    def state(self) -> Dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise T.DimensionError(f"{name}: checkpoint shape {value.shape} != {p.shape}")
            p.data = value.copy()


def _reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return Tensor(a.data.reshape(shape), parents=(a,), backward_rule=lambda g: (g.reshape(src),))


def model_forward(model: HOAGCNModel, features) -> np.ndarray:
    return model(features).numpy()


def bce_loss(pred, target) -> Tensor:
    """Mean binary cross-entropy over every entry."""
    pred = T.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise T.DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    pos = T.mul(target, T.log(pred))
    negs = T.mul(1.0 - target, T.log(T.sub(1.0, pred)))
    return T.neg(T.mean(pos + negs))


# ---------------------------------------------------------------------------
# checkpoints: manifest.json + params.bin (little-endian float64, manifest order)


def save_checkpoint(model: HOAGCNModel, directory, extra: dict = None) -> None:
    os.makedirs(directory, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name, p in model.named_parameters():
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        blobs.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        offset += p.data.size
    payload = b"".join(blobs)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "config": model.config.to_json(),
        "class_names": list(model.config.class_names) if model.config.class_names else None,
        "parameters": entries,
        "n_values": offset,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    if extra:
        manifest["extra"] = extra
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        fh.write(payload)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory) -> HOAGCNModel:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{directory} is not a {CHECKPOINT_FORMAT}")
    with open(os.path.join(directory, "params.bin"), "rb") as fh:
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise ValueError("checkpoint payload does not match manifest digest")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    model = HOAGCNModel(ModelConfig.from_json(manifest["config"]))
    state = {}
    for e in manifest["parameters"]:
        n = int(np.prod(e["shape"]))
        state[e["name"]] = flat[e["offset"] : e["offset"] + n].reshape(e["shape"])
    model.load_state(state)
    return model

