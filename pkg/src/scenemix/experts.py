"""Scenario-conditioned model head and the full ranking model.

A record's gathered representation v = [v_cb || v_u || v_ti || v_s] passes
through its scenario's element-wise affine transform, a pool of debias
experts (scenario-specific plus shared), and the scenario's gate, which
mixes expert probabilities into the final score. Each expert splits into a
main net and a bias net over the fairness-coefficient feature; the bias net
only exists at training time and is dropped when serving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .behavior import BehaviorExtract
from .errors import ContractViolation
from .features import FeatureGroupLayout, FeatureVocab, build_tables


@dataclass
class ModelConfig:
    embed_dim: int = 8
    attn_hidden: int = 32
    expert_hidden: int = 64
    expert_layers: int = 1
    m_specific: int = 2
    m_shared: int = 8
    bn_momentum: float = 0.9
    attention_mode: str = "full"
    transform_enabled: bool = True
    bias_net_enabled: bool = True


class ScenarioTransform:
    """Per-scenario element-wise affine map v' = v * beta + gamma.

    Initialized to the identity (beta = 1, gamma = 0) so enabling the layer
    changes nothing until training moves it.
    """

    def __init__(self, n_scenarios: int, width: int,
                 params: dict[str, nx.Tensor] | None = None):
        self.width = width
        self.beta: dict[int, nx.Tensor] = {}
        self.gamma: dict[int, nx.Tensor] = {}
        for k in range(1, n_scenarios + 1):
            b = nx.Tensor(np.ones(width), requires_grad=True, name=f"trans.s{k}.beta")
            g = nx.Tensor(np.zeros(width), requires_grad=True, name=f"trans.s{k}.gamma")
            self.beta[k] = b
            self.gamma[k] = g
            if params is not None:
                params[b.name] = b
                params[g.name] = g

    def __call__(self, v: nx.Tensor, k: int) -> nx.Tensor:
        if k not in self.beta:
            raise ContractViolation(f"unknown scenario id {k}")
        if v.data.shape[-1] != self.width:
            raise ContractViolation(f"transform expects width {self.width}")
        return nx.add(nx.mul(v, self.beta[k]), self.gamma[k])


def scenario_transform(v: nx.Tensor, k: int, t: ScenarioTransform) -> nx.Tensor:
    return t(v, k)


class DebiasExpert:
    """One expert: main net over v', plus an optional bias net over the
    fairness coefficient whose logit is added only in train mode."""

    def __init__(self, in_width: int, hidden: int, layers: int, bn_momentum: float,
                 bias_net: bool, rng: np.random.Generator, prefix: str,
                 params: dict[str, nx.Tensor] | None = None):
        if layers < 1:
            raise ContractViolation("expert needs at least one layer")
        # the bias branch draws from its own child stream so toggling it on or
        # off never shifts the main-net initialization
        bias_rng = rng.spawn(1)[0]
        self.prefix = prefix
        self.blocks = []
        w_in = in_width
        for i in range(layers):
            w = nx.Tensor(nx.uniform_init(rng, (w_in, hidden)), requires_grad=True,
                          name=f"{prefix}.l{i}.w")
            b = nx.Tensor(np.zeros(hidden), requires_grad=True, name=f"{prefix}.l{i}.b")
            bn = nx.BatchNorm(hidden, momentum=bn_momentum, prefix=f"{prefix}.l{i}.bn",
                              params=params)
            self.blocks.append((w, b, bn))
            if params is not None:
                params[w.name] = w
                params[b.name] = b
            w_in = hidden
        self.out_w = nx.Tensor(nx.uniform_init(rng, (w_in, 1)), requires_grad=True,
                               name=f"{prefix}.out.w")
        self.out_b = nx.Tensor(np.zeros(1), requires_grad=True, name=f"{prefix}.out.b")
        if params is not None:
            params[self.out_w.name] = self.out_w
            params[self.out_b.name] = self.out_b
        self.has_bias_net = bias_net
        if bias_net:
            # zero-initialized output layer: train == serve until training moves it
            self.bias_w1 = nx.Tensor(nx.uniform_init(bias_rng, (2, 2)), requires_grad=True,
                                     name=f"{prefix}.bias.w1")
            self.bias_b1 = nx.Tensor(np.zeros(2), requires_grad=True, name=f"{prefix}.bias.b1")
            self.bias_w2 = nx.Tensor(np.zeros((2, 1)), requires_grad=True,
                                     name=f"{prefix}.bias.w2")
            self.bias_b2 = nx.Tensor(np.zeros(1), requires_grad=True, name=f"{prefix}.bias.b2")
            if params is not None:
                for t in (self.bias_w1, self.bias_b1, self.bias_w2, self.bias_b2):
                    params[t.name] = t

    def batch_norms(self) -> list[nx.BatchNorm]:
        return [bn for _, _, bn in self.blocks]

    def main_logit(self, v: nx.Tensor, training: bool) -> nx.Tensor:
        h = v
        n = v.data.shape[0]
        # a one-record scenario slice cannot form batch statistics; fall back
        # to the running-stats normalization for that slice
        bn_training = training and n >= 2
        for w, b, bn in self.blocks:
            h = nx.relu(bn(nx.add(nx.matmul(h, w), b), training=bn_training))
        return nx.add(nx.matmul(h, self.out_w), self.out_b)

    def bias_logit(self, fc: np.ndarray) -> nx.Tensor:
        feats = nx.Tensor(np.stack([fc, np.log(fc)], axis=1))
        h = nx.relu(nx.add(nx.matmul(feats, self.bias_w1), self.bias_b1))
        return nx.add(nx.matmul(h, self.bias_w2), self.bias_b2)

    def forward(self, v: nx.Tensor, fc: np.ndarray, mode: str) -> nx.Tensor:
        """Probability column (n, 1). Train mode adds the bias-net logit;
        serve mode is a pure function of v."""
        if mode == "train":
            if self.has_bias_net:
                if np.any(fc <= 0):
                    raise ContractViolation("fairness coefficients must be positive")
                logit = nx.add(self.main_logit(v, training=True), self.bias_logit(fc))
            else:
                logit = self.main_logit(v, training=True)
        elif mode == "serve":
            logit = self.main_logit(v, training=False)
        else:
            raise ContractViolation(f"unknown mode {mode!r}")
        return nx.sigmoid(logit)


def expert_forward(e: DebiasExpert, v: nx.Tensor, fc: np.ndarray, mode: str) -> nx.Tensor:
    return e.forward(v, fc, mode)


class GateNet:
    """Single linear layer plus softmax producing the expert mix weights."""

    def __init__(self, in_width: int, n_experts: int, rng: np.random.Generator,
                 prefix: str, params: dict[str, nx.Tensor] | None = None):
        self.n_experts = n_experts
        self.w = nx.Tensor(nx.uniform_init(rng, (in_width, n_experts)), requires_grad=True,
                           name=f"{prefix}.w")
        self.b = nx.Tensor(np.zeros(n_experts), requires_grad=True, name=f"{prefix}.b")
        if params is not None:
            params[self.w.name] = self.w
            params[self.b.name] = self.b

    def weights(self, x: nx.Tensor) -> nx.Tensor:
        scores = nx.add(nx.matmul(x, self.w), self.b)
        shift = nx.Tensor(scores.data.max(axis=1, keepdims=True))
        e = nx.exp(nx.sub(scores, shift))
        return nx.div(e, nx.tensor_sum(e, axis=1, keepdims=True))


def gate_mix(weights: nx.Tensor, outputs: nx.Tensor) -> nx.Tensor:
    """Convex combination of expert probabilities; (n,) result."""
    if weights.data.shape != outputs.data.shape:
        raise ContractViolation(
            f"gate expects {weights.data.shape[1]} expert outputs, got {outputs.data.shape}")
    return nx.tensor_sum(nx.mul(weights, outputs), axis=1)


class CtrModel:
    """The full pipeline: embeddings, behavior extract, scenario transform,
    debias experts, and per-scenario gating."""

    def __init__(self, vocab: FeatureVocab, cfg: ModelConfig, seed: int = 0):
        if cfg.m_specific < 0 or cfg.m_shared < 0 or cfg.m_specific + cfg.m_shared < 1:
            raise ContractViolation("need at least one expert per scenario")
        # per-component child streams: toggling one component on or off, or
        # resizing it, leaves every other component's initialization intact,
        # so paired config comparisons start from a shared initialization
        root = np.random.default_rng(seed)
        r_tables, r_extract, r_experts, r_gates = root.spawn(4)
        self.vocab = vocab
        self.cfg = cfg
        self.params: dict[str, nx.Tensor] = {}
        self.layout = FeatureGroupLayout(d=cfg.embed_dim)
        self.tables = build_tables(vocab, cfg.embed_dim, r_tables, self.params)
        wi = self.layout.item_width
        ws = self.layout.scenario_width
        self.extract = BehaviorExtract(wi, ws, cfg.attention_mode, cfg.attn_hidden,
                                       r_extract, self.params)
        self.v_width = wi + self.layout.user_width + wi + ws
        self.n_scenarios = vocab.size("scenario_id") - 1
        self.transform = (ScenarioTransform(self.n_scenarios, self.v_width, self.params)
                          if cfg.transform_enabled else None)
        n_exp = cfg.m_specific + cfg.m_shared
        mk = dict(in_width=self.v_width, hidden=cfg.expert_hidden, layers=cfg.expert_layers,
                  bn_momentum=cfg.bn_momentum, bias_net=cfg.bias_net_enabled,
                  params=self.params)
        exp_rngs = iter(r_experts.spawn(cfg.m_shared + self.n_scenarios * cfg.m_specific))
        self.shared = [DebiasExpert(prefix=f"exp.sh{j}", rng=next(exp_rngs), **mk)
                       for j in range(cfg.m_shared)]
        self.specific = {k: [DebiasExpert(prefix=f"exp.s{k}.{j}", rng=next(exp_rngs), **mk)
                             for j in range(cfg.m_specific)]
                         for k in range(1, self.n_scenarios + 1)}
        self.gates = {k: GateNet(self.v_width, n_exp, r_gates, f"gate.s{k}", self.params)
                      for k in range(1, self.n_scenarios + 1)}
        self._bns = [bn for e in self._all_experts() for bn in e.batch_norms()]

    def _all_experts(self):
        yield from self.shared
        for k in sorted(self.specific):
            yield from self.specific[k]

    def _embed_group(self, fields, idx2d: np.ndarray) -> nx.Tensor:
        parts = [self.tables[f].lookup(idx2d[:, j]) for j, f in enumerate(fields)]
        return nx.concat(parts, axis=1)

    def _embed_events(self, fields, idx3d: np.ndarray) -> nx.Tensor:
        parts = [self.tables[f].lookup(idx3d[:, :, j]) for j, f in enumerate(fields)]
        return nx.concat(parts, axis=2)

    def forward(self, batch, mode: str):
        """Scores for one batch; returns (probabilities (B,), diagnostics)."""
        if mode not in ("train", "serve"):
            raise ContractViolation(f"unknown mode {mode!r}")
        keys = batch.scenario_key
        if np.any(keys < 1) or np.any(keys > self.n_scenarios):
            raise ContractViolation("record scenario id is not registered")
        B = batch.size
        lay = self.layout
        v_u = self.tables["user_id"].lookup(batch.user_idx)
        v_ti = self._embed_group(lay.target_item_fields, batch.item_idx)
        v_s = self._embed_group(lay.scenario_context_fields, batch.scen_ctx_idx)
        p_bi = self._embed_events(lay.behavior_item_fields, batch.beh_item_idx)
        p_bs = self._embed_events(lay.behavior_scenario_fields, batch.beh_scen_idx)
        v_cb, diag = self.extract(p_bi, p_bs, v_ti, v_s, batch.mask)
        v = nx.concat([v_cb, v_u, v_ti, v_s], axis=1)

        present = [int(k) for k in np.unique(keys)]
        if self.transform is not None:
            parts = None
            for k in present:
                idx_k = np.where(keys == k)[0]
                piece = nx.scatter_rows(self.transform(nx.rows(v, idx_k), k), idx_k, B)
                parts = piece if parts is None else nx.add(parts, piece)
            v_prime = parts
        else:
            v_prime = v

        shared_out = [e.forward(v_prime, batch.fc, mode) for e in self.shared]

        y = None
        gate_diag = {}
        for k in present:
            idx_k = np.where(keys == k)[0]
            v_k = nx.rows(v_prime, idx_k)
            fc_k = batch.fc[idx_k]
            outs = [e.forward(v_k, fc_k, mode) for e in self.specific[k]]
            outs += [nx.rows(o, idx_k) for o in shared_out]
            outs_mat = nx.concat(outs, axis=1) if len(outs) > 1 else outs[0]
            gw = self.gates[k].weights(v_k)
            mixed = gate_mix(gw, outs_mat)
            gate_diag[k] = gw.data
            piece = nx.scatter_rows(mixed, idx_k, B)
            y = piece if y is None else nx.add(y, piece)
        diag["gate"] = gate_diag
        return y, diag

    def score(self, dataset, batch_size: int = 1024, mode: str = "serve") -> np.ndarray:
        """Tape-free chunked scoring; serve mode by default."""
        out = np.empty(len(dataset))
        for lo in range(0, len(dataset), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(dataset)))
            y, _ = self.forward(dataset.batch(idx), mode)
            out[idx] = y.data
        return out

    # -- persistence ------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        tensors = {name: t.data for name, t in self.params.items()}
        for bn in self._bns:
            tensors.update(bn.state())
        return tensors

    def save(self, path) -> None:
        nx.save_tensors(path, self.state_tensors())

    def load(self, path) -> None:
        arrays = nx.load_tensors(path)
        want = set(self.state_tensors())
        if set(arrays) != want:
            missing = want - set(arrays)
            extra = set(arrays) - want
            raise ContractViolation(
                f"checkpoint does not match the model config "
                f"(missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
        for name, t in self.params.items():
            if arrays[name].shape != t.data.shape:
                raise ContractViolation(f"checkpoint shape mismatch for {name}")
            t.data = arrays[name].copy()
        for bn in self._bns:
            bn.load_state(arrays)
