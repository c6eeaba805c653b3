"""Comparison models and controlled synthetic data.

The factorization baseline and the conv-model ablations all train and
evaluate through the shared trainer/evaluator, so metric differences
come from the models alone. The synthetic generator plants a tunable
amount of cross-domain preference signal for trend experiments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import InteractionLog
from .graph import HeteroGraph
from .model import Activations, DisentangledGraphModel, MODES

logger = logging.getLogger(__name__)

MF_STREAM = 3
GEN_STREAM = 4


class MfModel:
    """Independent per-domain matrix factorization.

    Outputs are the embedding tables themselves; there is no parameter
    sharing or message passing, so domain d is untouched by anything
    happening in other domains (given fixed domain weights).
    """

    def __init__(self, graph: HeteroGraph, dim: int = 128, seed: int = 0,
                 params: dict = None):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.graph = graph
        self.dim = dim
        if params is None:
            params = {}
            bound = 1.0 / np.sqrt(dim)
            for d in range(graph.num_domains):
                # one stream per domain: domain d's draw never depends on
                # the other domains' table sizes
                rng = np.random.default_rng([seed, MF_STREAM, d])
                params[f"user_emb/d{d}"] = rng.uniform(
                    -bound, bound, size=(graph.num_users, dim))
                params[f"item_emb/d{d}"] = rng.uniform(
                    -bound, bound, size=(graph.num_items_per_domain[d], dim))
        self._validate(params)
        self.params = params

    def param_shapes(self):
        g = self.graph
        shapes = []
        for d in range(g.num_domains):
            shapes.append((f"user_emb/d{d}", (g.num_users, self.dim)))
            shapes.append((f"item_emb/d{d}", (g.num_items_per_domain[d], self.dim)))
        return shapes

    def _validate(self, params):
        expected = self.param_shapes()
        if list(params.keys()) != [n for n, _ in expected]:
            raise ValueError("parameter set mismatch for factorization model")
        for name, shape in expected:
            if params[name].shape != shape:
                raise ValueError(f"param {name}: shape {params[name].shape}, want {shape}")

    def forward(self) -> Activations:
        acts = Activations()
        for d in range(self.graph.num_domains):
            acts.o_u.append(self.params[f"user_emb/d{d}"])
            acts.o_i.append(self.params[f"item_emb/d{d}"])
        return acts

    def backward(self, acts: Activations, do_u: list, do_i: list) -> dict:
        grads = {}
        for d in range(self.graph.num_domains):
            if do_u[d].shape != acts.o_u[d].shape or do_i[d].shape != acts.o_i[d].shape:
                raise ValueError(f"upstream gradient shape mismatch in domain {d}")
            grads[f"user_emb/d{d}"] = do_u[d].copy()
            grads[f"item_emb/d{d}"] = do_i[d].copy()
        return grads

    def outputs(self):
        acts = self.forward()
        return acts.o_u, acts.o_i


def ablation(graph: HeteroGraph, dim: int, layers: int, mode: str,
             seed: int = 0, **kwargs) -> DisentangledGraphModel:
    """Conv model restricted to one path; mode 'full' is the unrestricted
    network, bit-identical to constructing it directly."""
    if mode not in MODES:
        raise ValueError(f"unknown ablation mode {mode!r}; expected one of {MODES}")
    return DisentangledGraphModel(graph, dim=dim, layers=layers, mode=mode,
                                  seed=seed, **kwargs)


@dataclass
class SyntheticSpec:
    num_users: int = 2000
    items_per_domain: int = 500
    num_domains: int = 3
    latent_dim: int = 16
    shared_signal: float = 0.8    # 0 = fully independent tastes, 1 = one taste
    interactions_per_user: int = 10
    temperature: float = 1.0
    seed: int = 0
    matched_item_latents: bool = False  # reuse domain-0 item latents everywhere

    def __post_init__(self):
        if not 0.0 <= self.shared_signal <= 1.0:
            raise ValueError("shared_signal must lie in [0, 1]")
        for field_name in ("num_users", "items_per_domain", "num_domains",
                           "latent_dim", "interactions_per_user"):
            if getattr(self, field_name) <= 0:
                raise ValueError(f"{field_name} must be positive")
        if self.interactions_per_user >= self.items_per_domain:
            raise ValueError("interactions_per_user must be below items_per_domain")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def generate_synthetic(spec: SyntheticSpec):
    """Plant user tastes as a shared/per-domain mix and sample clicks.

    User preference in domain d is a normalized blend s*z_shared +
    (1-s)*z_d of latent normals; items carry latent vectors; each user
    picks interactions_per_user distinct items per domain proportional
    to softmax(preference . item / temperature), via the Gumbel top-k
    trick. Timestamps are a random permutation per (user, domain).

    Returns (log, manifest); the manifest carries counts, per-domain
    item degree histograms, and the planted latents (arrays are for
    in-process checks; drop them before writing JSON).
    """
    rng = np.random.default_rng([spec.seed, GEN_STREAM])
    U, D, I = spec.num_users, spec.num_domains, spec.items_per_domain
    k = spec.interactions_per_user
    s = spec.shared_signal
    mix_norm = np.sqrt(s * s + (1.0 - s) * (1.0 - s))

    z_shared = rng.standard_normal((U, spec.latent_dim))
    z_domain = [rng.standard_normal((U, spec.latent_dim)) for _ in range(D)]
    prefs = [(s * z_shared + (1.0 - s) * z_domain[d]) / mix_norm for d in range(D)]
    item_latents = [rng.standard_normal((I, spec.latent_dim)) for _ in range(D)]
    if spec.matched_item_latents:
        item_latents = [item_latents[0]] * D

    interactions = []
    degree = [np.zeros(I, dtype=np.int64) for _ in range(D)]
    for d in range(D):
        logits = prefs[d] @ item_latents[d].T / spec.temperature
        gumbel = rng.gumbel(size=(U, I))
        picks = np.argpartition(-(logits + gumbel), k - 1, axis=1)[:, :k]
        for u in range(U):
            stamps = rng.permutation(k)
            for slot, item in enumerate(picks[u]):
                interactions.append((u, int(item), d, int(stamps[slot])))
                degree[d][item] += 1

    if not interactions:
        raise ValueError("degenerate spec produced no interactions")

    from .data import Interaction
    log = InteractionLog(
        interactions=[Interaction(*t) for t in interactions],
        user_names=[f"u{n}" for n in range(U)],
        item_names=[[f"i{n}" for n in range(I)] for _ in range(D)],
        domain_names=[f"d{n}" for n in range(D)],
    )
    manifest = {
        "num_users": U,
        "num_domains": D,
        "items_per_domain": I,
        "interactions_per_user": k,
        "shared_signal": s,
        "num_interactions": len(interactions),
        "item_degree_histogram": [
            {int(v): int(c) for v, c in zip(*np.unique(degree[d], return_counts=True))}
            for d in range(D)
        ],
        "prefs": prefs,
        "item_latents": item_latents,
    }
    return log, manifest


def manifest_json_subset(manifest: dict) -> dict:
    """The JSON-serializable part of a generator manifest."""
    drop = {"prefs", "item_latents"}
    out = {}
    for key, value in manifest.items():
        if key in drop:
            continue
        if key == "item_degree_histogram":
            out[key] = [{str(deg): cnt for deg, cnt in hist.items()} for hist in value]
        else:
            out[key] = value
    return out


def run_grid(split, modes, seeds, base_config, out_stream=None):
    """Train/evaluate every (mode, seed) combination with a shared
    protocol; returns rows and optionally appends them as TSV."""
    from .evaluation import build_eval_tasks, evaluate
    from .training import TrainConfig, fit

    rows = []
    for mode in modes:
        for seed in seeds:
            cfg_kwargs = dict(base_config.__dict__) if isinstance(base_config, TrainConfig) \
                else dict(base_config)
            cfg_kwargs["mode"] = mode
            cfg_kwargs["seed"] = seed
            config = TrainConfig(**cfg_kwargs)
            result = fit(split, config)
            tasks = build_eval_tasks(split, result.graph, seed=seed,
                                     num_negatives=config.num_eval_negatives)
            metrics = evaluate(result.model, tasks)
            for m in metrics:
                row = (mode, seed, m.domain_id, m.num_users, m.hr_at_10, m.ndcg_at_10)
                rows.append(row)
                if out_stream is not None:
                    print("\t".join(str(c) for c in row), file=out_stream)
    return rows
