"""BPR training loop: triplet sampling, the ranking loss with L2
regularization, per-domain weighting, and Adam updates.

Every model trained here exposes the same interface (params dict,
forward() -> activations with o_u/o_i, backward(acts, do_u, do_i) ->
grads), so the graph model, its ablations, and the factorization
baseline all run through this exact code path.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import SplitResult, split_leave_latest
from .graph import HeteroGraph, build_graph
from .model import DisentangledGraphModel, score_pairs
from .model import save_checkpoint, load_checkpoint  # re-exported  # noqa: F401
from .numeric import AdamState, adam_step, finite_diff_grad

logger = logging.getLogger(__name__)

# rng stream tags; keeps sampling streams independent per purpose
TRIPLET_STREAM = 1


@dataclass
class TrainConfig:
    epochs: int = 200
    dim: int = 128
    layers: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_reg: float = 1e-5
    domain_weights: object = "auto"   # "auto" or list of positive floats
    triplets_per_epoch: int = None    # None -> one expected pass over |E_d|
    seed: int = 0
    mode: str = "full"                # full | specific_only | shared_only | mf
    tie_relation_weights: bool = False
    mean_aggregation: bool = False
    reg_per_domain: bool = False      # weight the L2 term by each beta_d
    alternate_domains: bool = False   # experimental: one step per domain
    use_validation: bool = False
    eval_every: int = 10
    num_eval_negatives: int = 99

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.domain_weights != "auto":
            weights = list(self.domain_weights)
            if any(w <= 0 for w in weights):
                raise ValueError("domain weights must be positive")
            self.domain_weights = weights


@dataclass
class TripletBatch:
    """(user, positive, negative) triplets of one domain, as arrays."""

    domain_id: int
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return len(self.users)


def resolve_domain_weights(graph: HeteroGraph, spec) -> list:
    """beta_d per domain; "auto" weights by interaction-count share."""
    if spec == "auto":
        counts = [graph.num_edges(d) for d in range(graph.num_domains)]
        total = sum(counts)
        if total == 0:
            raise ValueError("graph has no edges")
        return [c / total for c in counts]
    weights = list(spec)
    if len(weights) != graph.num_domains:
        raise ValueError(f"expected {graph.num_domains} domain weights, got {len(weights)}")
    if any(w <= 0 for w in weights):
        raise ValueError("domain weights must be positive")
    return weights


def sample_triplets(graph: HeteroGraph, domain_id: int, n: int, rng) -> TripletBatch:
    """Draw n BPR triplets: positive uniform over the domain's edges,
    negative uniform over its items with rejection of interacted pairs
    (100 rounds, then the draw is dropped with a warning)."""
    edge_users, edge_items = graph.edge_arrays(domain_id)
    if len(edge_users) == 0:
        raise ValueError(f"domain {domain_id} has no edges to sample from")
    num_items = graph.num_items_per_domain[domain_id]
    if num_items < 2:
        raise ValueError(f"domain {domain_id} needs at least 2 items for negatives")
    if n <= 0:
        raise ValueError("triplet count must be positive")

    pick = rng.integers(0, len(edge_users), size=n)
    users = edge_users[pick]
    pos = edge_items[pick]
    neg = np.full(n, -1, dtype=np.int64)
    pending = np.arange(n)
    for _ in range(100):
        if len(pending) == 0:
            break
        cand = rng.integers(0, num_items, size=len(pending))
        interacted = graph.has_edges(domain_id, users[pending], cand)
        hit = ~interacted
        neg[pending[hit]] = cand[hit]
        pending = pending[interacted]
    if len(pending):
        logger.warning("domain %d: dropped %d/%d triplets after 100 rejection rounds",
                       domain_id, len(pending), n)
        keep = neg >= 0
        users, pos, neg = users[keep], pos[keep], neg[keep]
    if len(users) == 0:
        raise ValueError(f"domain {domain_id}: no negatives found; "
                         "every sampled user interacted with every item")
    return TripletBatch(domain_id, users, pos, neg)


def bpr_loss(x_pos, x_neg) -> np.ndarray:
    """-ln sigmoid(x_pos - x_neg), computed as softplus(-(x_pos - x_neg))
    which is stable for any finite inputs."""
    z = np.asarray(x_pos, dtype=np.float64) - np.asarray(x_neg, dtype=np.float64)
    return np.logaddexp(0.0, -z)


def bpr_loss_grad(x_pos, x_neg) -> np.ndarray:
    """Gradient of bpr_loss w.r.t. the score difference: -sigmoid(-z)."""
    z = np.asarray(x_pos, dtype=np.float64) - np.asarray(x_neg, dtype=np.float64)
    return -expit(-z)


def params_sumsq(params: dict) -> float:
    return float(sum(np.sum(p * p) for p in params.values()))


def domain_loss(x_pos, x_neg, params: dict = None, lambda_reg: float = 0.0) -> float:
    """Mean triplet BPR loss, plus lambda_reg * ||theta||^2 when params
    are supplied (the standalone form; the epoch loop adds the penalty
    once on the total instead)."""
    x_pos = np.atleast_1d(np.asarray(x_pos, dtype=np.float64))
    if x_pos.size == 0:
        raise ValueError("empty triplet batch")
    loss = float(np.mean(bpr_loss(x_pos, x_neg)))
    if lambda_reg:
        if params is None:
            raise ValueError("lambda_reg set but no params given")
        loss += lambda_reg * params_sumsq(params)
    return loss


def compute_loss_and_grads(model, batches: dict, lambda_reg: float,
                           betas: list, reg_per_domain: bool = False):
    """Total weighted loss and gradients for one step.

    batches maps domain_id -> TripletBatch. Returns (total_loss,
    per-domain mean BPR dict, grads dict). The L2 penalty enters the
    total once; with reg_per_domain it is scaled by sum(beta_d) instead,
    matching a per-domain reading of the objective.
    """
    acts = model.forward()
    domain_losses = {}
    do_u = [np.zeros_like(a) for a in acts.o_u]
    do_i = [np.zeros_like(a) for a in acts.o_i]
    total = 0.0
    for d in sorted(batches):
        batch = batches[d]
        if len(batch) == 0:
            raise ValueError(f"empty triplet batch for domain {d}")
        x_pos = score_pairs(acts.o_u[d], acts.o_i[d], batch.users, batch.pos_items)
        x_neg = score_pairs(acts.o_u[d], acts.o_i[d], batch.users, batch.neg_items)
        mean_bpr = float(np.mean(bpr_loss(x_pos, x_neg)))
        domain_losses[d] = mean_bpr
        total += betas[d] * mean_bpr
        # d(total)/d(z_k) for each triplet, folding in the batch mean
        dz = betas[d] / len(batch) * bpr_loss_grad(x_pos, x_neg)
        u_rows = acts.o_u[d][batch.users]
        np.add.at(do_u[d], batch.users,
                  dz[:, None] * (acts.o_i[d][batch.pos_items] - acts.o_i[d][batch.neg_items]))
        np.add.at(do_i[d], batch.pos_items, dz[:, None] * u_rows)
        np.add.at(do_i[d], batch.neg_items, -dz[:, None] * u_rows)
    if not np.isfinite(total):
        raise RuntimeError(f"non-finite loss: total={total}, per-domain={domain_losses}; "
                           "check inputs or lower the learning rate")
    grads = model.backward(acts, do_u, do_i)
    if lambda_reg:
        reg_scale = lambda_reg * (sum(betas[d] for d in batches) if reg_per_domain else 1.0)
        total += reg_scale * params_sumsq(model.params)
        for name, param in model.params.items():
            grads[name] += 2.0 * reg_scale * param
    return total, domain_losses, grads


@dataclass
class EpochReport:
    epoch: int
    domain_losses: dict
    total_loss: float
    elapsed_ms: float


def format_epoch_line(report: EpochReport, num_domains: int) -> str:
    """One training-log line: epoch, per-domain mean BPR, total, ms."""
    cells = [str(report.epoch)]
    cells += [f"{report.domain_losses.get(d, float('nan')):.6f}"
              for d in range(num_domains)]
    cells.append(f"{report.total_loss:.6f}")
    cells.append(f"{report.elapsed_ms:.1f}")
    return "\t".join(cells)


class Trainer:
    """Owns optimizer state and the per-domain sampling streams."""

    def __init__(self, model, config: TrainConfig):
        self.model = model
        self.config = config
        self.graph = model.graph
        self.betas = resolve_domain_weights(self.graph, config.domain_weights)
        self.states = {
            name: AdamState.for_param(p, lr=config.lr, beta1=config.beta1,
                                      beta2=config.beta2, eps=config.eps)
            for name, p in model.params.items()
        }
        self.rngs = [np.random.default_rng([config.seed, TRIPLET_STREAM, d])
                     for d in range(self.graph.num_domains)]
        self.epoch = 0

    def _sample_all(self) -> dict:
        batches = {}
        for d in range(self.graph.num_domains):
            n = self.config.triplets_per_epoch or self.graph.num_edges(d)
            batches[d] = sample_triplets(self.graph, d, n, self.rngs[d])
        return batches

    def _apply_step(self, grads: dict) -> None:
        # canonical parameter order keeps updates bitwise reproducible
        for name, _ in self.model.param_shapes():
            self.model.params[name] = adam_step(self.model.params[name],
                                                grads[name], self.states[name])

    def train_epoch(self) -> EpochReport:
        t0 = time.perf_counter()
        cfg = self.config
        batches = self._sample_all()
        if cfg.alternate_domains:
            # experimental: one optimization step per domain, ascending
            domain_losses = {}
            for d in sorted(batches):
                _, losses, grads = compute_loss_and_grads(
                    self.model, {d: batches[d]}, cfg.lambda_reg, self.betas,
                    cfg.reg_per_domain)
                domain_losses.update(losses)
                self._apply_step(grads)
            total = sum(self.betas[d] * domain_losses[d] for d in domain_losses)
            total += cfg.lambda_reg * params_sumsq(self.model.params)
        else:
            total, domain_losses, grads = compute_loss_and_grads(
                self.model, batches, cfg.lambda_reg, self.betas, cfg.reg_per_domain)
            self._apply_step(grads)
        if not np.isfinite(total):
            raise RuntimeError(
                f"non-finite loss at epoch {self.epoch}: total={total}, "
                f"per-domain={domain_losses}; try a lower lr")
        self.epoch += 1
        return EpochReport(self.epoch, domain_losses, total,
                           (time.perf_counter() - t0) * 1e3)


def make_model(graph: HeteroGraph, config: TrainConfig):
    if config.mode == "mf":
        from .baselines import MfModel
        return MfModel(graph, dim=config.dim, seed=config.seed)
    return DisentangledGraphModel(
        graph, dim=config.dim, layers=config.layers, mode=config.mode,
        tie_relation_weights=config.tie_relation_weights,
        mean_aggregation=config.mean_aggregation, seed=config.seed)


@dataclass
class FitResult:
    model: object
    graph: HeteroGraph
    reports: list
    best_epoch: int = None


def fit(split: SplitResult, config: TrainConfig, log_stream=None) -> FitResult:
    """Train a model on the split's train side.

    With use_validation, a second leave-latest split of the train data
    selects the best epoch by mean NDCG@10 and the returned model
    carries those parameters.
    """
    train_log = split.train
    val_split = None
    if config.use_validation:
        val_split = split_leave_latest(train_log)
        train_log = val_split.train
    graph = build_graph(train_log)
    model = make_model(graph, config)
    trainer = Trainer(model, config)

    val_tasks = None
    best = None
    reports = []
    for _ in range(config.epochs):
        report = trainer.train_epoch()
        reports.append(report)
        if log_stream is not None:
            print(format_epoch_line(report, graph.num_domains), file=log_stream)
        if val_split is not None and report.epoch % config.eval_every == 0:
            from .evaluation import build_eval_tasks, evaluate
            if val_tasks is None:
                val_tasks = build_eval_tasks(val_split, graph, seed=config.seed,
                                             num_negatives=config.num_eval_negatives)
            metrics = evaluate(model, val_tasks)
            mean_ndcg = float(np.mean([m.ndcg_at_10 for m in metrics])) if metrics else 0.0
            if best is None or mean_ndcg > best[0]:
                best = (mean_ndcg, report.epoch,
                        {k: v.copy() for k, v in model.params.items()})
    best_epoch = None
    if best is not None:
        best_epoch = best[1]
        model.params.update(best[2])
    return FitResult(model=model, graph=graph, reports=reports, best_epoch=best_epoch)


def gradient_check(model, batches: dict, betas: list, lambda_reg: float = 1e-3,
                   h: float = 1e-5, corrupt_param: str = None) -> dict:
    """Compare analytic gradients of the full objective against central
    differences. Returns per-parameter max relative error.

    The relative denominator is floored at 1e-5: entries tinier than
    that sit inside finite-difference noise (truncation ~h^2), where a
    raw ratio would measure noise, not correctness. corrupt_param
    deliberately breaks one gradient as a negative control.
    """
    total, _, grads = compute_loss_and_grads(model, batches, lambda_reg, betas)
    if corrupt_param is not None:
        grads[corrupt_param] = grads[corrupt_param] + 1.0

    def objective(_p):
        return compute_loss_and_grads(model, batches, lambda_reg, betas)[0]

    report = {}
    for name, _ in model.param_shapes():
        numeric = finite_diff_grad(objective, model.params[name], h=h)
        analytic = grads[name]
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-5)
        report[name] = float(np.max(np.abs(analytic - numeric) / denom))
    return report
