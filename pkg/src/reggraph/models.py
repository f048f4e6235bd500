"""DHGReg and its MLP / GCN / GAT baselines on top of the numerics core."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import DynamicHeteroGraph, GraphError
from .numerics import ops
from .numerics.autodiff import Tensor, parameter
from .numerics.sparse import SparseMatrix

MODEL_KINDS = ("mlp", "gcn", "gat", "dhgreg")


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    model_kind: str = "dhgreg"
    n_layer: int = 4
    n_hid: int = 256
    dropout: float = 0.1
    n_heads: int = 8
    d_in: int = 64
    n_classes: int = 2

    def validate(self) -> "ModelConfig":
        if self.model_kind not in MODEL_KINDS:
            raise ModelConfigError(f"unknown model kind {self.model_kind!r}")
        if self.n_layer < 2:
            raise ModelConfigError("n_layer must be at least 2")
        if self.model_kind == "dhgreg" and self.n_layer % 2:
            raise ModelConfigError("dhgreg needs an even n_layer (structural/temporal pairs)")
        if self.model_kind == "gat" and self.n_hid % self.n_heads:
            raise ModelConfigError("n_hid must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelConfigError("dropout must lie in [0, 1)")
        if self.d_in < 1 or self.n_hid < 1 or self.n_classes < 2:
            raise ModelConfigError("dimensions must be positive and n_classes >= 2")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GraphInputs:
    """Everything a forward pass reads: features, account rows, adjacencies."""

    features: np.ndarray
    account_idx: np.ndarray
    a_struct: SparseMatrix
    a_time: SparseMatrix
    a_union: SparseMatrix

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @classmethod
    def from_graph(cls, graph: DynamicHeteroGraph, features: np.ndarray, dtype=np.float64) -> "GraphInputs":
        if not graph.frozen:
            raise GraphError("graph must be frozen before building model inputs")
        if features.shape[0] != graph.num_nodes:
            raise GraphError("feature table does not cover every node")
        return cls(
            features=np.asarray(features, dtype=dtype),
            account_idx=graph.account_nodes(),
            a_struct=graph.normalized_adjacency("structural").astype(dtype),
            a_time=graph.normalized_adjacency("temporal").astype(dtype),
            a_union=graph.normalized_adjacency("union").astype(dtype),
        )

    def astype(self, dtype) -> "GraphInputs":
        return GraphInputs(
            self.features.astype(dtype),
            self.account_idx,
            self.a_struct.astype(dtype),
            self.a_time.astype(dtype),
            self.a_union.astype(dtype),
        )


@dataclass
class ForwardOutput:
    logits: Tensor
    account_idx: np.ndarray


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def gcn_conv(a: SparseMatrix, x: Tensor, w: Tensor, gain: Tensor, bias: Tensor,
             p: float = 0.0, training: bool = False, rng=None) -> Tensor:
    """One graph convolution: ``A X W`` then layer norm, ReLU and dropout."""
    if w.data.shape[0] < w.data.shape[1]:
        h = ops.matmul(ops.spmm(a, x), w)
    else:
        h = ops.spmm(a, ops.matmul(x, w))
    h = ops.layer_norm(h, gain, bias)
    return ops.dropout(ops.relu(h), p, training, rng)


class Model:
    """Base class holding named parameters and the shared prediction head."""

    kind = ""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        if config.model_kind != self.kind:
            raise ModelConfigError(f"{type(self).__name__} cannot take a {config.model_kind!r} config")
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.no_decay: set[str] = set()
        self._rng = np.random.default_rng(seed)
        self.build()
        self._add_head()

    # parameter helpers
    def _weight(self, name, fan_in, fan_out, shape=None):
        self.params[name] = parameter(glorot(self._rng, fan_in, fan_out, shape), name)

    def _bias(self, name, width):
        self.params[name] = parameter(np.zeros(width), name)
        self.no_decay.add(name)

    def _norm(self, name, width):
        self.params[f"{name}.gain"] = parameter(np.ones(width), f"{name}.gain")
        self.params[f"{name}.bias"] = parameter(np.zeros(width), f"{name}.bias")
        self.no_decay.update((f"{name}.gain", f"{name}.bias"))

    def _add_head(self):
        h, c = self.config.n_hid, self.config.n_classes
        self._weight("head.fc1.w", h, h)
        self._bias("head.fc1.b", h)
        self._norm("head.ln", h)
        self._weight("head.fc2.w", h, c)
        self._bias("head.fc2.b", c)

    def _ln(self, name):
        return self.params[f"{name}.gain"], self.params[f"{name}.bias"]

    def head(self, h: Tensor, training: bool, rng) -> Tensor:
        p = self.params
        h = ops.linear(h, p["head.fc1.w"], p["head.fc1.b"])
        h = ops.dropout(h, self.config.dropout, training, rng)
        h = ops.relu(ops.layer_norm(h, *self._ln("head.ln")))
        return ops.linear(h, p["head.fc2.w"], p["head.fc2.b"])

    def build(self):
        raise NotImplementedError

    def encode(self, inputs: GraphInputs, training: bool, rng) -> Tensor:
        """Hidden representation of the account rows."""
        raise NotImplementedError

    def forward(self, inputs: GraphInputs, training: bool = False, rng=None) -> ForwardOutput:
        if inputs.features.shape[1] != self.config.d_in:
            raise ModelConfigError(
                f"model expects {self.config.d_in} input features, got {inputs.features.shape[1]}"
            )
        h = self.encode(inputs, training, rng)
        return ForwardOutput(self.head(h, training, rng), inputs.account_idx)

    # state
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ModelConfigError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            if v.shape != self.params[k].data.shape:
                raise ModelConfigError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].data.shape}")
            self.params[k].data = np.array(v, dtype=self.params[k].data.dtype)

    def astype(self, dtype) -> "Model":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    @property
    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())


class MLP(Model):
    """Feed-forward network on account features only."""

    kind = "mlp"

    def build(self):
        c = self.config
        width = c.d_in
        for i in range(c.n_layer):
            self._weight(f"fc{i}.w", width, c.n_hid)
            self._bias(f"fc{i}.b", c.n_hid)
            width = c.n_hid

    def encode(self, inputs, training, rng):
        h = Tensor(inputs.features[inputs.account_idx])
        for i in range(self.config.n_layer):
            h = ops.linear(h, self.params[f"fc{i}.w"], self.params[f"fc{i}.b"])
            h = ops.dropout(ops.relu(h), self.config.dropout, training, rng)
        return h


class GCN(Model):
    """Type-blind graph convolutions over structural and temporal edges together."""

    kind = "gcn"

    def build(self):
        c = self.config
        width = c.d_in
        for i in range(c.n_layer):
            self._weight(f"conv{i}.w", width, c.n_hid)
            self._norm(f"conv{i}.ln", c.n_hid)
            width = c.n_hid

    def encode(self, inputs, training, rng):
        h = Tensor(inputs.features)
        for i in range(self.config.n_layer):
            h = gcn_conv(inputs.a_union, h, self.params[f"conv{i}.w"], *self._ln(f"conv{i}.ln"),
                         self.config.dropout, training, rng)
        return ops.take_rows(h, inputs.account_idx)


class GAT(Model):
    """Multi-head attention layers; hidden layers concatenate heads, the last averages."""

    kind = "gat"

    def build(self):
        c = self.config
        width = c.d_in
        for i in range(c.n_layer):
            f = self._head_dim(i)
            self._weight(f"att{i}.w", width, c.n_heads * f)
            self._weight(f"att{i}.a_src", f, 1, shape=(c.n_heads, f))
            self._weight(f"att{i}.a_dst", f, 1, shape=(c.n_heads, f))
            self._norm(f"att{i}.ln", c.n_hid)
            width = c.n_hid

    def _head_dim(self, i):
        c = self.config
        return c.n_hid if i == c.n_layer - 1 else c.n_hid // c.n_heads

    def encode(self, inputs, training, rng):
        c, p = self.config, self.params
        h = Tensor(inputs.features)
        for i in range(c.n_layer):
            z = ops.matmul(h, p[f"att{i}.w"])
            h = ops.gat_attention(z, p[f"att{i}.a_src"], p[f"att{i}.a_dst"], inputs.a_union,
                                  c.n_heads, concat=i < c.n_layer - 1)
            h = ops.relu(ops.layer_norm(h, *self._ln(f"att{i}.ln")))
            h = ops.dropout(h, c.dropout, training, rng)
        return ops.take_rows(h, inputs.account_idx)


class DHGReg(Model):
    """Alternating structural conv -> FC -> temporal conv blocks, then the head.

    ``n_layer`` counts convolutions, so there are ``n_layer // 2`` blocks.
    Temporal convolutions run over the full node set; nodes without
    temporal edges (accounts) only see their own self-loop there.
    """

    kind = "dhgreg"

    def build(self):
        c = self.config
        width = c.d_in
        for b in range(c.n_layer // 2):
            self._weight(f"block{b}.struct.w", width, c.n_hid)
            self._norm(f"block{b}.struct.ln", c.n_hid)
            self._weight(f"block{b}.fc.w", c.n_hid, c.n_hid)
            self._bias(f"block{b}.fc.b", c.n_hid)
            self._weight(f"block{b}.time.w", c.n_hid, c.n_hid)
            self._norm(f"block{b}.time.ln", c.n_hid)
            width = c.n_hid

    def encode(self, inputs, training, rng):
        c, p = self.config, self.params
        h = Tensor(inputs.features)
        for b in range(c.n_layer // 2):
            h = gcn_conv(inputs.a_struct, h, p[f"block{b}.struct.w"], *self._ln(f"block{b}.struct.ln"),
                         c.dropout, training, rng)
            h = ops.linear(h, p[f"block{b}.fc.w"], p[f"block{b}.fc.b"])
            h = gcn_conv(inputs.a_time, h, p[f"block{b}.time.w"], *self._ln(f"block{b}.time.ln"),
                         c.dropout, training, rng)
        return ops.take_rows(h, inputs.account_idx)


MODEL_CLASSES = {cls.kind: cls for cls in (MLP, GCN, GAT, DHGReg)}


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    config.validate()
    return MODEL_CLASSES[config.model_kind](config, seed=seed)
