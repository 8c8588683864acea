"""End-to-end model: learnable graph dictionary, adaptation, transport
embedding, attention fusion, and the classifier head with its loss.

Parameters are partitioned into two trained sets — phi (the sampling
projection vector) and psi (input-branch encoder weights, dictionary node
features, attention projection, classifier head) — plus the momentum-updated
dictionary-branch encoder, which belongs to neither and never receives
gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import mswe, tensor as T, vgda
from .data import LabeledGraph, featurize, normalize_adjacency
from .encoder import DEFAULT_HIDDEN_DIMS, EncoderParams, encode, xavier_uniform
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    """Loss assembly knobs: -log p[y] + beta * KL, plus the sensitivity grid."""

    beta: float = 0.001
    p_hat: float = 0.5
    lambdas: tuple = mswe.DEFAULT_LAMBDA_GRID

    def __post_init__(self):
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not (0.0 < self.p_hat < 1.0):
            raise ConfigError(f"p_hat must lie in (0, 1), got {self.p_hat}")

    @property
    def num_sensitivities(self):
        return len(self.lambdas)


@dataclass
class ModelConfig:
    """Everything needed to rebuild the model architecture."""

    num_classes: int
    feature_scheme: str
    feature_dim: int
    n_padded: int
    num_keys: int = 14
    encoder_dims: tuple = DEFAULT_HIDDEN_DIMS
    head_hidden: int = 64
    temperature: float = vgda.DEFAULT_TEMPERATURE
    sinkhorn_max_iter: int = mswe.DEFAULT_MAX_ITER
    sinkhorn_tol: float = mswe.DEFAULT_TOL
    loss: LossConfig = field(default_factory=LossConfig)

    def to_json(self):
        payload = {
            "num_classes": self.num_classes,
            "feature_scheme": self.feature_scheme,
            "feature_dim": self.feature_dim,
            "n_padded": self.n_padded,
            "num_keys": self.num_keys,
            "encoder_dims": list(self.encoder_dims),
            "head_hidden": self.head_hidden,
            "temperature": self.temperature,
            "sinkhorn_max_iter": self.sinkhorn_max_iter,
            "sinkhorn_tol": self.sinkhorn_tol,
            "beta": self.loss.beta,
            "p_hat": self.loss.p_hat,
            "lambdas": list(self.loss.lambdas),
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        loss = LossConfig(beta=raw.pop("beta"), p_hat=raw.pop("p_hat"),
                          lambdas=tuple(raw.pop("lambdas")))
        raw["encoder_dims"] = tuple(raw["encoder_dims"])
        return cls(loss=loss, **raw)


@dataclass
class DictionaryKey:
    """One dictionary entry: fixed adjacency, trainable node features."""

    key_id: int
    source_class: int
    adjacency: np.ndarray
    a_hat: np.ndarray
    features: T.Tensor            # trainable (psi)
    encoded: T.Tensor | None = None

    @property
    def node_count(self):
        return self.adjacency.shape[0]


@dataclass
class BaseGraphDictionary:
    keys: list[DictionaryKey]

    def __len__(self):
        return len(self.keys)


def init_base_dictionary(train_graphs, k, seed, scheme, feature_dim):
    """Seed k dictionary keys from training graphs, round-robin over classes.

    Classes are visited in sorted order; within a class, graphs are sampled
    without replacement in shuffled order.  Exhausted classes drop out of
    the rotation.  Deterministic given the seed.
    """
    graphs = list(train_graphs)
    if k < 1:
        raise ConfigError(f"dictionary size must be >= 1, got {k}")
    if k > len(graphs):
        raise ConfigError(f"dictionary size {k} exceeds the {len(graphs)} "
                          "available training graphs")
    rng = np.random.default_rng(seed)
    pools = {}
    for idx, graph in enumerate(graphs):
        pools.setdefault(graph.class_label, []).append(idx)
    order = sorted(pools)
    for cls in order:
        pool = np.asarray(pools[cls], dtype=np.int64)
        rng.shuffle(pool)
        pools[cls] = list(pool)

    keys = []
    while len(keys) < k:
        progressed = False
        for cls in order:
            if len(keys) == k:
                break
            if pools[cls]:
                idx = pools[cls].pop()
                graph = graphs[idx]
                keys.append(DictionaryKey(
                    key_id=len(keys),
                    source_class=graph.class_label,
                    adjacency=graph.adjacency.copy(),
                    a_hat=normalize_adjacency(graph.adjacency),
                    features=T.Tensor(featurize(graph, scheme, feature_dim),
                                      requires_grad=True),
                ))
                progressed = True
        if not progressed:  # unreachable given k <= len(graphs)
            raise ConfigError("dictionary initialization ran out of graphs")
    return BaseGraphDictionary(keys=keys)


@dataclass
class ClassifierHead:
    """Two dense layers with a ReLU between: K -> hidden -> num_classes."""

    w1: T.Tensor
    w2: T.Tensor

    @classmethod
    def initialize(cls, num_keys, hidden, num_classes, rng):
        return cls(w1=T.Tensor(xavier_uniform(rng, num_keys, hidden),
                               requires_grad=True),
                   w2=T.Tensor(xavier_uniform(rng, hidden, num_classes),
                               requires_grad=True))


@dataclass
class PreparedGraph:
    """A graph preprocessed for the model: padded features and adjacency."""

    features: np.ndarray        # (n_padded, feature_dim), zero pad rows
    a_hat: np.ndarray           # (n_padded, n_padded), pad nodes isolated
    real_mask: np.ndarray       # (n_padded,) boolean
    label: int
    node_count: int


@dataclass
class ForwardOverrides:
    """Pinned discrete state for ablations and gradient checks.

    ``masks`` replaces each key's sampled node mask (no straight-through
    surrogate is attached); ``plans`` replaces the transport solves with
    constant (C, n, m_j) stacks.
    """

    masks: list | None = None
    plans: list | None = None


@dataclass
class Diagnostics:
    """Per-forward exportable state (NumPy copies, detached)."""

    sampling_probabilities: list
    masks: list
    costs: list
    plan_stacks: list
    plan_meta: list
    h_matrix: np.ndarray
    alpha: np.ndarray
    probabilities: np.ndarray
    kl: float


@dataclass
class ForwardResult:
    probabilities: T.Tensor     # (1, num_classes)
    kl: T.Tensor                # (1, 1)
    h_matrix: T.Tensor          # (K, C)
    h_hat: T.Tensor             # (K, 1)
    alpha: T.Tensor             # (1, C)
    diagnostics: Diagnostics | None = None


class GraphDictionaryModel:
    """The full pipeline: encode -> adapt keys -> transport embed -> classify."""

    def __init__(self, config, encoder_input, encoder_dict, dictionary,
                 vgda_params, w_m, head):
        self.config = config
        self.encoder_input = encoder_input
        self.encoder_dict = encoder_dict
        self.dictionary = dictionary
        self.vgda_params = vgda_params
        self.w_m = w_m
        self.head = head

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, config, train_graphs, seed):
        """Fresh model with the dictionary seeded from training graphs."""
        rng = np.random.default_rng(seed)
        encoder_input = EncoderParams.initialize(
            config.feature_dim, rng, hidden_dims=config.encoder_dims,
            trainable=True)
        encoder_dict = encoder_input.copy_as_momentum_branch()
        dictionary = init_base_dictionary(train_graphs, config.num_keys, rng,
                                          config.feature_scheme,
                                          config.feature_dim)
        vgda_params = vgda.VgdaParams.initialize(config.n_padded, rng)
        w_m = T.Tensor(np.zeros((1, config.num_keys)), requires_grad=True)
        head = ClassifierHead.initialize(config.num_keys, config.head_hidden,
                                         config.num_classes, rng)
        return cls(config, encoder_input, encoder_dict, dictionary,
                   vgda_params, w_m, head)

    # -- parameter partition ------------------------------------------------

    def phi_parameters(self):
        """The sampling-projection set (adapted per input)."""
        return [self.vgda_params.w_r]

    def psi_parameters(self):
        """Encoder, dictionary features, attention, and head weights."""
        params = list(self.encoder_input.weights)
        params.extend(key.features for key in self.dictionary.keys)
        params.append(self.w_m)
        params.extend([self.head.w1, self.head.w2])
        return params

    def parameters(self):
        return self.phi_parameters() + self.psi_parameters()

    def momentum_parameters(self):
        return list(self.encoder_dict.weights)

    # -- preprocessing ------------------------------------------------------

    def prepare(self, graph):
        """Pad one graph's features/adjacency to the shared node count."""
        cfg = self.config
        n = graph.node_count
        if n > cfg.n_padded:
            raise ConfigError(f"graph with {n} nodes exceeds the padded "
                              f"size {cfg.n_padded}")
        features = np.zeros((cfg.n_padded, cfg.feature_dim))
        features[:n] = featurize(graph, cfg.feature_scheme, cfg.feature_dim)
        padded_adj = np.zeros((cfg.n_padded, cfg.n_padded))
        padded_adj[:n, :n] = graph.adjacency
        real_mask = np.zeros(cfg.n_padded, dtype=bool)
        real_mask[:n] = True
        return PreparedGraph(features=features,
                             a_hat=normalize_adjacency(padded_adj),
                             real_mask=real_mask, label=graph.class_label,
                             node_count=n)

    # -- forward ------------------------------------------------------------

    def refresh_key_encodings(self):
        """Re-encode every key through the momentum branch.

        Call once per optimizer step inside the active tape (gradients flow
        to the trainable node features through the frozen branch weights),
        or once before a batch of evaluation passes.
        """
        for key in self.dictionary.keys:
            key.encoded = encode(key.features, key.a_hat, self.encoder_dict)

    def forward(self, prepared, mode, rng=None, overrides=None,
                collect=False, use_vgda=True):
        """One pass: class probabilities, total KL, and embeddings."""
        cfg = self.config
        if self.dictionary.keys[0].encoded is None:
            raise ConfigError("call refresh_key_encodings() before forward()")
        f_full = encode(prepared.features, prepared.a_hat, self.encoder_input)
        f_real = T.row_select(f_full, prepared.real_mask)

        adapted = []
        factors = []
        kl_terms = []
        for j, key in enumerate(self.dictionary.keys):
            if use_vgda:
                mask_override = None
                if overrides is not None and overrides.masks is not None:
                    mask_override = overrides.masks[j]
                adapted_key, factor, kl_j = vgda.adapt_key(
                    f_full, key.encoded, self.vgda_params.w_r, mode,
                    rng=rng, temperature=cfg.temperature,
                    p_hat=cfg.loss.p_hat, key_id=key.key_id,
                    mask_override=mask_override)
                factors.append(factor)
                kl_terms.append(kl_j)
            else:
                adapted_key = vgda.AdaptedKey(
                    indices=np.arange(key.node_count),
                    features=key.encoded, key_id=key.key_id)
            adapted.append(adapted_key)

        plans_override = overrides.plans if overrides is not None else None
        h_matrix, costs, plan_meta = mswe.embed_keys_multi(
            f_real, adapted, cfg.loss.lambdas,
            max_iter=cfg.sinkhorn_max_iter, tol=cfg.sinkhorn_tol,
            plans_override=plans_override)
        h_hat, alpha = mswe.aggregate_attention_matrix(h_matrix, self.w_m)

        hidden = T.relu(T.matmul(T.transpose(h_hat), self.head.w1))
        logits = T.matmul(hidden, self.head.w2)
        probabilities = T.row_softmax(logits)
        kl_total = T.add_n(kl_terms) if kl_terms else T.constant(0.0)

        diagnostics = None
        if collect:
            if plans_override is not None:
                stacks = [np.asarray(p) for p in plans_override]
            else:
                stacks = [np.stack([p.values for p in per_key])
                          for per_key in plan_meta]
            diagnostics = Diagnostics(
                sampling_probabilities=[f.p.values[:, 0].copy()
                                        for f in factors],
                masks=[f.z.copy() for f in factors],
                costs=[c.values.copy() for c in costs],
                plan_stacks=stacks,
                plan_meta=plan_meta,
                h_matrix=h_matrix.values.copy(),
                alpha=alpha.values[0].copy(),
                probabilities=probabilities.values[0].copy(),
                kl=kl_total.item(),
            )
        return ForwardResult(probabilities=probabilities, kl=kl_total,
                             h_matrix=h_matrix, h_hat=h_hat, alpha=alpha,
                             diagnostics=diagnostics)

    # -- loss ---------------------------------------------------------------

    def loss(self, result, label):
        """-log p[label] + beta * KL, as a scalar tensor to minimize."""
        cfg = self.config
        if not 0 <= label < cfg.num_classes:
            raise ConfigError(f"label {label} outside [0, {cfg.num_classes})")
        onehot = np.zeros((cfg.num_classes, 1))
        onehot[label, 0] = 1.0
        p_true = T.matmul(result.probabilities, T.constant(onehot))
        cross_entropy = T.neg(T.log(T.clamp(p_true, 1e-12, None)))
        return T.add(cross_entropy, T.scale(result.kl, cfg.loss.beta))

    def batch_loss(self, results, labels):
        """Mean loss over a batch of forward results."""
        losses = [self.loss(r, y) for r, y in zip(results, labels)]
        return T.mean_all(T.concat_rows(losses))

    # -- evaluation helpers --------------------------------------------------

    def predict(self, prepared):
        """Eval-mode class probabilities (deterministic, no tape)."""
        result = self.forward(prepared, vgda.EVAL)
        return result.probabilities.values[0]

    def evaluate(self, prepared_list):
        """Accuracy over prepared graphs in eval mode."""
        self.refresh_key_encodings()
        correct = 0
        for prepared in prepared_list:
            probs = self.predict(prepared)
            if int(np.argmax(probs)) == prepared.label:
                correct += 1
        return correct / len(prepared_list) if prepared_list else 0.0


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(model, path):
    """Serialize all parameters plus config to one .npz, bit-exactly."""
    arrays = {"config": np.frombuffer(model.config.to_json().encode("utf-8"),
                                      dtype=np.uint8).copy()}
    for i, w in enumerate(model.encoder_input.weights):
        arrays[f"enc_input_{i}"] = w.values
    for i, w in enumerate(model.encoder_dict.weights):
        arrays[f"enc_dict_{i}"] = w.values
    for key in model.dictionary.keys:
        arrays[f"key_{key.key_id}_adjacency"] = key.adjacency
        arrays[f"key_{key.key_id}_features"] = key.features.values
        arrays[f"key_{key.key_id}_class"] = np.asarray([key.source_class])
    arrays["w_r"] = model.vgda_params.w_r.values
    arrays["w_m"] = model.w_m.values
    arrays["head_w1"] = model.head.w1.values
    arrays["head_w2"] = model.head.w2.values
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Rebuild a model from a checkpoint written by :func:`save_checkpoint`."""
    with np.load(path) as data:
        config = ModelConfig.from_json(bytes(data["config"]).decode("utf-8"))
        enc_input = EncoderParams(
            weights=[T.Tensor(data[f"enc_input_{i}"], requires_grad=True)
                     for i in range(len(config.encoder_dims))],
            trainable=True)
        enc_dict = EncoderParams(
            weights=[T.Tensor(data[f"enc_dict_{i}"], requires_grad=False)
                     for i in range(len(config.encoder_dims))],
            trainable=False)
        keys = []
        for key_id in range(config.num_keys):
            adjacency = data[f"key_{key_id}_adjacency"]
            keys.append(DictionaryKey(
                key_id=key_id,
                source_class=int(data[f"key_{key_id}_class"][0]),
                adjacency=adjacency,
                a_hat=normalize_adjacency(adjacency),
                features=T.Tensor(data[f"key_{key_id}_features"],
                                  requires_grad=True)))
        vgda_params = vgda.VgdaParams(w_r=T.Tensor(data["w_r"],
                                                   requires_grad=True))
        w_m = T.Tensor(data["w_m"], requires_grad=True)
        head = ClassifierHead(w1=T.Tensor(data["head_w1"], requires_grad=True),
                              w2=T.Tensor(data["head_w2"], requires_grad=True))
    return GraphDictionaryModel(config, enc_input, enc_dict,
                                BaseGraphDictionary(keys=keys), vgda_params,
                                w_m, head)
