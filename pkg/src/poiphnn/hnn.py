"""Hypergraph neural network that predicts binary variable values.

Architecture (all MLPs are ``linear -> LeakyReLU -> linear``):

* embedding MLPs for variable, constraint, hyperedge-membership and edge features;
* ``hyper_iters`` rounds of hyperedge convolution: every hyperedge sums
  ``h_v * h_ve`` over its members, then every variable takes
  ``phi_H([h_v, mean(h_e * h_ve)]) + h_v``;
* ``vc_iters`` rounds of variable-constraint convolution, first updating
  constraints then variables with the new constraint embeddings;
* an output MLP giving one logit per variable.

Convolution weights are shared across iterations.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Node, Tape, sigmoid, softplus
from .hypergraph import CONS_DIM, EDGE_DIM, MEMBER_DIM, VAR_DIM, Hypergraph, batch, encode
from .model import Instance

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embed_hidden: int = 64
    embed_dim: int = 16
    hyper_iters: int = 6
    vc_iters: int = 1
    leaky_slope: float = 0.1
    enable_hyper_conv: bool = True
    enable_vc_conv: bool = True
    feature_transform: str = "signed_log"
    seed: int = 0

    def __post_init__(self):
        if min(self.embed_hidden, self.embed_dim) <= 0 or min(self.hyper_iters, self.vc_iters) < 0:
            raise ConfigError("dimensions must be positive and iteration counts non-negative")
        if not (self.enable_hyper_conv or self.enable_vc_conv):
            raise ConfigError("at least one convolution must stay enabled")
        if self.feature_transform not in ("signed_log", "none"):
            raise ConfigError(f"unknown feature transform {self.feature_transform!r}")

    @classmethod
    def for_ablation(cls, ablation: str, **kw) -> "ModelConfig":
        if ablation == "none":
            return cls(**kw)
        if ablation == "no-hyper":
            return cls(enable_hyper_conv=False, **kw)
        if ablation == "no-vc":
            return cls(enable_vc_conv=False, **kw)
        raise ConfigError(f"unknown ablation {ablation!r}")

    @property
    def encode_mode(self) -> str:
        if not self.enable_hyper_conv:
            return "no-hyper"
        if not self.enable_vc_conv:
            return "no-vc"
        return "full"

    def architecture(self) -> dict:
        out = asdict(self)
        out.pop("seed")
        return out


def mlp_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    """(input, output) widths of every two-layer MLP."""
    d = cfg.embed_dim
    return {
        "embed_var": (VAR_DIM, d),
        "embed_cons": (CONS_DIM, d),
        "embed_member": (MEMBER_DIM, d),
        "embed_edge": (EDGE_DIM, d),
        "phi_H": (2 * d, d),
        "phi_C": (3 * d, d),
        "phi_V": (3 * d, d),
        "f_C": (2 * d, d),
        "f_V": (2 * d, d),
        "out": (d, 1),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h = cfg.embed_hidden
    shapes = {}
    for name, (fan_in, fan_out) in mlp_shapes(cfg).items():
        shapes[f"{name}.W1"] = (fan_in, h)
        shapes[f"{name}.b1"] = (h,)
        shapes[f"{name}.W2"] = (h, fan_out)
        shapes[f"{name}.b2"] = (fan_out,)
    return shapes


@dataclass
class ModelState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def copy(self) -> "ModelState":
        return ModelState(
            {k: a.copy() for k, a in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
        )


def init_params(cfg: ModelConfig) -> ModelState:
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            params[name] = np.zeros(shape)
    return ModelState(
        params,
        {k: np.zeros_like(a) for k, a in params.items()},
        {k: np.zeros_like(a) for k, a in params.items()},
    )


def _transform(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    if cfg.feature_transform == "signed_log":
        return np.sign(x) * np.log1p(np.abs(x))
    return x


class _Net:
    """One forward pass recorded on a tape."""

    def __init__(self, st: ModelState, cfg: ModelConfig):
        self.tape = Tape()
        self.cfg = cfg
        self.p = {k: self.tape.param(v) for k, v in st.params.items()}

    def mlp(self, name: str, x: Node) -> Node:
        t, p = self.tape, self.p
        hidden = t.leaky_relu(t.add_bias(t.matmul(x, p[f"{name}.W1"]), p[f"{name}.b1"]), self.cfg.leaky_slope)
        return t.add_bias(t.matmul(hidden, p[f"{name}.W2"]), p[f"{name}.b2"])

    def embed(self, name: str, feats: np.ndarray) -> Node:
        return self.mlp(name, self.tape.const(_transform(feats, self.cfg)))


@dataclass
class EmbeddingState:
    h_v: Node
    h_c: Node
    h_ve: Node
    h_ce: Node
    h_vc: Node
    h_e: Node | None = None


def embed_raw(hg: Hypergraph, net: _Net) -> EmbeddingState:
    for feats, width, what in ((hg.var_feat, VAR_DIM, "variable"), (hg.cons_feat, CONS_DIM, "constraint"),
                               (hg.mem_feat, MEMBER_DIM, "membership"), (hg.edge_feat, EDGE_DIM, "edge")):
        if feats.ndim != 2 or feats.shape[1] != width:
            raise ValueError(f"{what} features have shape {feats.shape}, expected (*, {width})")
    return EmbeddingState(
        h_v=net.embed("embed_var", hg.var_feat),
        h_c=net.embed("embed_cons", hg.cons_feat),
        h_ve=net.embed("embed_member", hg.mem_feat),
        h_ce=net.embed("embed_member", hg.cmem_feat),
        h_vc=net.embed("embed_edge", hg.edge_feat),
    )


def hyper_conv_step(hg: Hypergraph, emb: EmbeddingState, net: _Net) -> EmbeddingState:
    t = net.tape
    h_e = t.segment_sum(t.mul(t.gather(emb.h_v, hg.mem_var), emb.h_ve), hg.mem_edge, hg.n_h)
    if hg.cmem_cons.size:
        from_cons = t.mul(t.gather(emb.h_c, hg.cmem_cons), emb.h_ce)
        h_e = t.add(h_e, t.segment_sum(from_cons, hg.cmem_edge, hg.n_h))
    msg = t.segment_mean(t.mul(t.gather(h_e, hg.mem_edge), emb.h_ve), hg.mem_var, hg.n)
    h_v = t.add(net.mlp("phi_H", t.concat([emb.h_v, msg])), emb.h_v)
    return EmbeddingState(h_v, emb.h_c, emb.h_ve, emb.h_ce, emb.h_vc, h_e)


def vc_conv_step(hg: Hypergraph, emb: EmbeddingState, net: _Net) -> EmbeddingState:
    t = net.tape

    def messages(h_c, h_v, name):
        z = t.concat([t.gather(h_c, hg.edge_cons), t.gather(h_v, hg.edge_var), emb.h_vc])
        return net.mlp(name, z)

    agg_c = t.segment_sum(messages(emb.h_c, emb.h_v, "phi_C"), hg.edge_cons, hg.m)
    h_c = t.add(net.mlp("f_C", t.concat([emb.h_c, agg_c])), emb.h_c)
    agg_v = t.segment_sum(messages(h_c, emb.h_v, "phi_V"), hg.edge_var, hg.n)
    h_v = t.add(net.mlp("f_V", t.concat([emb.h_v, agg_v])), emb.h_v)
    return EmbeddingState(h_v, h_c, emb.h_ve, emb.h_ce, emb.h_vc, emb.h_e)


def _run(hg: Hypergraph, st: ModelState, cfg: ModelConfig) -> tuple[_Net, Node]:
    net = _Net(st, cfg)
    emb = embed_raw(hg, net)
    if cfg.enable_hyper_conv:
        for _ in range(cfg.hyper_iters):
            emb = hyper_conv_step(hg, emb, net)
    if cfg.enable_vc_conv:
        for _ in range(cfg.vc_iters):
            emb = vc_conv_step(hg, emb, net)
    logits = net.tape.column(net.mlp("out", emb.h_v), 0)
    return net, logits


def forward(hg: Hypergraph, st: ModelState, cfg: ModelConfig) -> np.ndarray:
    return _run(hg, st, cfg)[1].value


def bce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise ValueError("logits and labels must have equal length")
    return float(np.mean(softplus(logits) - labels * logits))


def loss_and_grads(
    hg: Hypergraph, st: ModelState, cfg: ModelConfig, labels: np.ndarray,
    weights: np.ndarray | None = None, scale: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted BCE (plain mean when ``weights`` is None) and its exact gradients."""
    labels = np.asarray(labels, dtype=np.float64)
    if weights is None:
        weights = np.full(labels.shape, 1.0 / max(labels.size, 1))
    net, logits = _run(hg, st, cfg)
    loss = net.tape.bce_with_logits(logits, labels, weights)
    net.tape.backward(loss, seed=scale)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.value)) for k, p in net.p.items()}
    return scale * float(loss.value), grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("invalid training hyperparameters")


def adamw_step(st: ModelState, grads: dict[str, np.ndarray], tc: TrainConfig) -> None:
    st.step += 1
    bc1 = 1.0 - tc.beta1 ** st.step
    bc2 = 1.0 - tc.beta2 ** st.step
    for k, p in st.params.items():
        g = grads[k]
        p *= 1.0 - tc.learning_rate * tc.weight_decay
        st.m[k] = tc.beta1 * st.m[k] + (1.0 - tc.beta1) * g
        st.v[k] = tc.beta2 * st.v[k] + (1.0 - tc.beta2) * g * g
        p -= tc.learning_rate * (st.m[k] / bc1) / (np.sqrt(st.v[k] / bc2) + tc.eps)


def _check_binary(inst: Instance) -> None:
    if not inst.is_binary:
        raise ConfigError(f"instance {inst.name} must be binarized first")


def _batch_inputs(graphs: list[Hypergraph], labels: list[np.ndarray]):
    hg, owner = batch(graphs)
    sizes = np.array([g.n for g in graphs], dtype=np.float64)
    weights = 1.0 / (sizes[owner] * len(graphs))
    return hg, np.concatenate(labels).astype(np.float64), weights


def train(
    dataset: Sequence[tuple[Instance, np.ndarray]],
    tc: TrainConfig = TrainConfig(),
    cfg: ModelConfig = ModelConfig(),
    state: ModelState | None = None,
) -> tuple[ModelState, list[float]]:
    """Mini-batch AdamW training on ``(binary instance, optimal labels)`` pairs.

    A batch loss is the mean over its instances of each instance's mean BCE.
    Returns the trained state and the mean training loss of every epoch.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    st = state.copy() if state is not None else init_params(cfg)
    graphs, labels = [], []
    for inst, y in dataset:
        _check_binary(inst)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (inst.n,):
            raise ConfigError(f"labels of {inst.name} have shape {y.shape}, expected ({inst.n},)")
        graphs.append(encode(inst, cfg.encode_mode))
        labels.append(y)
    rng = np.random.default_rng(tc.seed)
    curve = []
    for epoch in range(tc.epochs):
        order = rng.permutation(len(graphs))
        total = 0.0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            hg, y, w = _batch_inputs([graphs[i] for i in idx], [labels[i] for i in idx])
            loss, grads = loss_and_grads(hg, st, cfg, y, w)
            adamw_step(st, grads, tc)
            total += loss * len(idx)
        curve.append(total / len(graphs))
        log.info("epoch %d/%d loss %.6f", epoch + 1, tc.epochs, curve[-1])
    return st, curve


def mean_loss(dataset: Sequence[tuple[Instance, np.ndarray]], st: ModelState, cfg: ModelConfig) -> float:
    """Mean over instances of the per-instance BCE."""
    losses = [bce_loss(forward(encode(inst, cfg.encode_mode), st, cfg), y) for inst, y in dataset]
    return float(np.mean(losses))


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    prob: np.ndarray
    rounded: np.ndarray
    uncertainty: np.ndarray

    @classmethod
    def from_logits(cls, logits) -> "Prediction":
        logits = np.asarray(logits, dtype=np.float64)
        prob = sigmoid(logits)
        return cls(logits, prob, (prob >= 0.5).astype(np.int64), np.minimum(prob, 1.0 - prob))

    @classmethod
    def from_probabilities(cls, prob) -> "Prediction":
        prob = np.asarray(prob, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logits = np.log(prob) - np.log1p(-prob)
        return cls(logits, prob, (prob >= 0.5).astype(np.int64), np.minimum(prob, 1.0 - prob))


def predict(inst: Instance, st: ModelState, cfg: ModelConfig) -> Prediction:
    _check_binary(inst)
    return Prediction.from_logits(forward(encode(inst, cfg.encode_mode), st, cfg))


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_to_dict(st: ModelState, cfg: ModelConfig) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(cfg),
        "tensors": {k: v.tolist() for k, v in st.params.items()},
        "optimizer_state": {
            "m": {k: v.tolist() for k, v in st.m.items()},
            "v": {k: v.tolist() for k, v in st.v.items()},
        },
        "step": st.step,
    }


def save_checkpoint(st: ModelState, cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_to_dict(st, cfg)), encoding="utf-8")


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> tuple[ModelState, ModelConfig]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('format_version') if isinstance(doc, dict) else None!r}")
    try:
        cfg = ModelConfig(**doc["model_config"])
        shapes = param_shapes(cfg)
        tensors = {k: np.asarray(v, dtype=np.float64) for k, v in doc["tensors"].items()}
        opt = doc["optimizer_state"]
        m = {k: np.asarray(v, dtype=np.float64) for k, v in opt["m"].items()}
        v = {k: np.asarray(val, dtype=np.float64) for k, val in opt["v"].items()}
        step = int(doc["step"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if expected is not None and expected.architecture() != cfg.architecture():
        raise CheckpointError(f"checkpoint config {cfg.architecture()} does not match {expected.architecture()}")
    for group in (tensors, m, v):
        if set(group) != set(shapes):
            raise CheckpointError("checkpoint tensor names do not match the model")
        for k, arr in group.items():
            if arr.shape != shapes[k]:
                raise CheckpointError(f"tensor {k} has shape {arr.shape}, expected {shapes[k]}")
    return ModelState(tensors, m, v, step), cfg
