"""Tests for triplet sampling, the ranking loss, the epoch loop and the
full-objective gradient check."""

import io
import math

import numpy as np
import pytest

from crossrec.data import split_leave_latest
from crossrec.graph import build_graph
from crossrec.model import DisentangledGraphModel, load_checkpoint, save_checkpoint, score_pairs
from crossrec.numeric import AdamState, adam_step
from crossrec.training import (
    EpochReport,
    TrainConfig,
    Trainer,
    TripletBatch,
    bpr_loss,
    bpr_loss_grad,
    compute_loss_and_grads,
    domain_loss,
    fit,
    format_epoch_line,
    gradient_check,
    make_model,
    resolve_domain_weights,
    sample_triplets,
)

from helpers import make_log, random_graph, tiny_overfit_log

LN2 = 0.6931471805599453
LN_4_3 = 0.2876820724517809
EXP_NEG_50 = 1.9287498479639178e-22


def small_setup(seed=0, num_users=8, items=(6, 5), num_edges=20, dim=4):
    rng = np.random.default_rng(seed)
    graph, log = random_graph(rng, num_users, items, num_edges)
    model = DisentangledGraphModel(graph, dim=dim, layers=2, mode="full", seed=seed + 50)
    return graph, log, model


# -- triplet sampling ----------------------------------------------------------


def test_sampled_triplets_satisfy_invariants():
    graph, log, _ = small_setup(seed=1, num_users=10, items=(8, 6), num_edges=40)
    for d in range(2):
        rng = np.random.default_rng(2)
        batch = sample_triplets(graph, d, 10_000, rng)
        assert len(batch) == 10_000
        assert graph.has_edges(d, batch.users, batch.pos_items).all()
        assert not graph.has_edges(d, batch.users, batch.neg_items).any()
        assert (batch.pos_items != batch.neg_items).all()


def test_triplet_sampling_is_deterministic():
    graph, _, _ = small_setup(seed=3)
    a = sample_triplets(graph, 0, 500, np.random.default_rng(7))
    b = sample_triplets(graph, 0, 500, np.random.default_rng(7))
    assert np.array_equal(a.users, b.users)
    assert np.array_equal(a.pos_items, b.pos_items)
    assert np.array_equal(a.neg_items, b.neg_items)


def test_forced_negative_when_one_item_free():
    # the user interacted with every item except item 3
    log = make_log([(0, 0, 0), (0, 1, 0), (0, 2, 0)], 1, [4])
    graph = build_graph(log)
    batch = sample_triplets(graph, 0, 200, np.random.default_rng(8))
    assert (batch.neg_items == 3).all()


def test_fully_dense_domain_errors():
    log = make_log([(u, i, 0) for u in range(2) for i in range(2)], 2, [2])
    graph = build_graph(log)
    with pytest.raises(ValueError, match="every sampled user interacted"):
        sample_triplets(graph, 0, 50, np.random.default_rng(9))


def test_sampling_rejects_bad_requests():
    graph, _, _ = small_setup(seed=4)
    with pytest.raises(ValueError):
        sample_triplets(graph, 0, 0, np.random.default_rng(0))
    single_item = build_graph(make_log([(0, 0, 0)], 1, [1]))
    with pytest.raises(ValueError, match="at least 2 items"):
        sample_triplets(single_item, 0, 5, np.random.default_rng(0))


# -- loss ----------------------------------------------------------------------


def test_bpr_equal_scores_is_ln2():
    assert abs(float(bpr_loss(1.7, 1.7)) - LN2) < 1e-12
    assert abs(float(bpr_loss(0.0, 0.0)) - LN2) < 1e-12


def test_bpr_closed_form_at_ln3_margin():
    # sigmoid(ln 3) = 0.75, so the loss is ln(4/3)
    assert abs(float(bpr_loss(math.log(3.0), 0.0)) - LN_4_3) < 1e-12


def test_bpr_extreme_margins_are_stable():
    big = float(bpr_loss(0.0, 50.0))
    assert abs(big - 50.0) < 1e-9
    tiny = float(bpr_loss(50.0, 0.0))
    assert tiny > 0.0
    assert abs(tiny - EXP_NEG_50) < 1e-34
    assert np.isfinite(bpr_loss(-700.0, 700.0))


def test_bpr_grad_matches_difference_quotient():
    assert abs(float(bpr_loss_grad(0.0, 0.0)) + 0.5) < 1e-12
    h = 1e-6
    for z in (-3.0, -0.5, 0.0, 1.2, 8.0):
        numeric = (float(bpr_loss(z + h, 0.0)) - float(bpr_loss(z - h, 0.0))) / (2 * h)
        assert abs(float(bpr_loss_grad(z, 0.0)) - numeric) < 1e-8


def test_domain_loss_closed_forms():
    assert abs(domain_loss([1.0], [1.0]) - LN2) < 1e-12
    params = {"w": np.array([[2.0]])}
    got = domain_loss([0.0], [0.0], params=params, lambda_reg=1.0)
    assert abs(got - (LN2 + 4.0)) < 1e-12
    with pytest.raises(ValueError, match="empty"):
        domain_loss([], [])


def test_total_loss_matches_independent_recomputation():
    graph, _, model = small_setup(seed=5)
    batches = {d: sample_triplets(graph, d, 30, np.random.default_rng(60 + d))
               for d in range(2)}
    betas = [0.3, 0.7]
    lam = 0.01
    total, per_domain, _ = compute_loss_and_grads(model, batches, lam, betas)

    # recompute everything with plain python floats
    o_u, o_i = model.outputs()
    want = 0.0
    for d, batch in batches.items():
        acc = 0.0
        for u, p, n in zip(batch.users, batch.pos_items, batch.neg_items):
            xp = float(o_u[d][u] @ o_i[d][p])
            xn = float(o_u[d][u] @ o_i[d][n])
            acc += math.log(1.0 + math.exp(-(xp - xn)))
        acc /= len(batch)
        assert abs(per_domain[d] - acc) < 1e-12
        want += betas[d] * acc
    want += lam * sum(float(np.sum(p * p)) for p in model.params.values())
    assert abs(total - want) < 1e-10


def test_weighting_linearity():
    graph, _, model = small_setup(seed=6)
    batches = {d: sample_triplets(graph, d, 20, np.random.default_rng(70 + d))
               for d in range(2)}
    total_1, _, _ = compute_loss_and_grads(model, batches, 0.0, [0.4, 0.6])
    total_2, _, _ = compute_loss_and_grads(model, batches, 0.0, [0.8, 1.2])
    assert abs(total_2 - 2.0 * total_1) < 1e-12


def test_regularization_monotonicity():
    graph, _, model = small_setup(seed=7)
    batches = {d: sample_triplets(graph, d, 20, np.random.default_rng(80 + d))
               for d in range(2)}
    prev = -np.inf
    for lam in (0.0, 1e-6, 1e-4, 1e-2, 1.0):
        total, _, _ = compute_loss_and_grads(model, batches, lam, [0.5, 0.5])
        assert total >= prev
        prev = total


def test_reg_per_domain_scales_by_beta_sum():
    graph, _, model = small_setup(seed=8)
    batches = {d: sample_triplets(graph, d, 15, np.random.default_rng(90 + d))
               for d in range(2)}
    betas = [2.0, 3.0]
    lam = 1e-3
    base, per_domain, _ = compute_loss_and_grads(model, batches, 0.0, betas)
    once, _, _ = compute_loss_and_grads(model, batches, lam, betas)
    per_dom, _, _ = compute_loss_and_grads(model, batches, lam, betas, reg_per_domain=True)
    sumsq = sum(float(np.sum(p * p)) for p in model.params.values())
    assert abs(once - (base + lam * sumsq)) < 1e-10
    assert abs(per_dom - (base + lam * 5.0 * sumsq)) < 1e-10


def test_one_adam_step_decreases_loss_for_most_seeds():
    # descent sanity: tiny lr, fixed batch, no regularization
    graph, _, _ = small_setup(seed=9)
    wins = 0
    for seed in range(100):
        model = DisentangledGraphModel(graph, dim=4, layers=2, mode="full", seed=seed)
        batches = {d: sample_triplets(graph, d, 25, np.random.default_rng([seed, d]))
                   for d in range(2)}
        before, _, grads = compute_loss_and_grads(model, batches, 0.0, [0.5, 0.5])
        states = {n: AdamState.for_param(p, lr=1e-4) for n, p in model.params.items()}
        for name in model.params:
            model.params[name] = adam_step(model.params[name], grads[name], states[name])
        after, _, _ = compute_loss_and_grads(model, batches, 0.0, [0.5, 0.5])
        wins += after <= before
    assert wins >= 95


# -- trainer --------------------------------------------------------------------


def test_resolve_domain_weights():
    graph, _, _ = small_setup(seed=10, num_edges=24)
    auto = resolve_domain_weights(graph, "auto")
    counts = [graph.num_edges(d) for d in range(2)]
    assert auto == [c / sum(counts) for c in counts]
    assert resolve_domain_weights(graph, [1.0, 2.0]) == [1.0, 2.0]
    with pytest.raises(ValueError):
        resolve_domain_weights(graph, [1.0])
    with pytest.raises(ValueError):
        resolve_domain_weights(graph, [1.0, -1.0])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_reg=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(domain_weights=[0.0, 1.0])


def test_zero_lr_epoch_keeps_parameters():
    graph, _, model = small_setup(seed=11)
    before = {k: v.copy() for k, v in model.params.items()}
    trainer = Trainer(model, TrainConfig(epochs=1, dim=4, lr=0.0, seed=1,
                                         lambda_reg=0.0))
    trainer.train_epoch()
    for name in before:
        assert np.array_equal(model.params[name], before[name])


def test_training_is_bitwise_deterministic():
    def run():
        graph, _, _ = small_setup(seed=12)
        config = TrainConfig(epochs=10, dim=4, layers=2, lr=0.01, seed=5,
                             triplets_per_epoch=16)
        model = make_model(graph, config)
        trainer = Trainer(model, config)
        for _ in range(config.epochs):
            trainer.train_epoch()
        return {k: v.tobytes() for k, v in model.params.items()}

    first, second = run(), run()
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], name


def test_loss_decreases_on_tiny_dataset():
    split = split_leave_latest(tiny_overfit_log())
    graph = build_graph(split.train)
    config = TrainConfig(epochs=60, dim=8, layers=2, lr=0.02, seed=0,
                         lambda_reg=0.0, triplets_per_epoch=12)
    model = make_model(graph, config)
    trainer = Trainer(model, config)
    first = trainer.train_epoch().total_loss
    last = None
    for _ in range(config.epochs - 1):
        last = trainer.train_epoch().total_loss
    assert last < first


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_diagnostic():
    graph, _, model = small_setup(seed=13)
    model.params["user_emb"][0, 0] = np.inf
    trainer = Trainer(model, TrainConfig(epochs=1, dim=4, seed=2))
    with pytest.raises((RuntimeError, ValueError)):
        trainer.train_epoch()


def test_alternate_domains_mode_runs():
    graph, _, model = small_setup(seed=14)
    trainer = Trainer(model, TrainConfig(epochs=1, dim=4, lr=0.01, seed=3,
                                         alternate_domains=True,
                                         triplets_per_epoch=8))
    before = model.params["user_emb"].copy()
    report = trainer.train_epoch()
    assert np.isfinite(report.total_loss)
    assert set(report.domain_losses) == {0, 1}
    assert not np.array_equal(model.params["user_emb"], before)


def test_epoch_log_line_format():
    report = EpochReport(epoch=3, domain_losses={0: 0.5, 1: 0.25},
                         total_loss=0.375, elapsed_ms=12.5)
    line = format_epoch_line(report, 2)
    cells = line.split("\t")
    assert cells[0] == "3"
    assert float(cells[1]) == 0.5
    assert float(cells[2]) == 0.25
    assert float(cells[3]) == 0.375


# -- fit pipeline -----------------------------------------------------------------


def test_fit_runs_and_logs():
    split = split_leave_latest(tiny_overfit_log())
    stream = io.StringIO()
    config = TrainConfig(epochs=5, dim=4, layers=1, lr=0.01, seed=4,
                         triplets_per_epoch=6)
    result = fit(split, config, log_stream=stream)
    assert len(result.reports) == 5
    lines = stream.getvalue().strip().splitlines()
    assert len(lines) == 5
    assert result.best_epoch is None


def test_fit_with_validation_selects_best_epoch():
    rng = np.random.default_rng(15)
    _, log = random_graph(rng, 20, (10, 10), 150)
    split = split_leave_latest(log)
    config = TrainConfig(epochs=6, dim=4, layers=1, lr=0.01, seed=6,
                         use_validation=True, eval_every=2,
                         num_eval_negatives=3, triplets_per_epoch=32)
    result = fit(split, config)
    assert result.best_epoch in (2, 4, 6)


def test_mf_mode_runs_through_fit():
    split = split_leave_latest(tiny_overfit_log())
    config = TrainConfig(epochs=5, dim=4, mode="mf", lr=0.05, seed=7,
                         triplets_per_epoch=6)
    result = fit(split, config)
    assert result.model.__class__.__name__ == "MfModel"
    assert np.isfinite(result.reports[-1].total_loss)


def test_checkpoint_roundtrip_preserves_scores(tmp_path):
    split = split_leave_latest(tiny_overfit_log())
    config = TrainConfig(epochs=10, dim=4, layers=2, lr=0.02, seed=8,
                         triplets_per_epoch=6)
    result = fit(split, config)
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(result.model, path)
    loaded = load_checkpoint(path, result.graph)
    a_u, a_i = result.model.outputs()
    b_u, b_i = loaded.outputs()
    for d in range(2):
        assert np.array_equal(a_u[d], b_u[d])
        assert np.array_equal(a_i[d], b_i[d])


# -- gradient check ----------------------------------------------------------------


def test_gradient_check_passes_on_full_objective():
    graph, _, model = small_setup(seed=16, num_users=6, items=(5, 4),
                                  num_edges=14, dim=4)
    batches = {d: sample_triplets(graph, d, 12, np.random.default_rng([16, d]))
               for d in range(2)}
    report = gradient_check(model, batches, [0.5, 0.5], lambda_reg=1e-3)
    worst = max(report.values())
    assert worst < 1e-4, f"max relative error {worst}"


def test_gradient_check_negative_control():
    graph, _, model = small_setup(seed=17, num_users=5, items=(4, 3),
                                  num_edges=10, dim=3)
    batches = {d: sample_triplets(graph, d, 8, np.random.default_rng([17, d]))
               for d in range(2)}
    report = gradient_check(model, batches, [0.5, 0.5], lambda_reg=1e-3,
                            corrupt_param="user_emb")
    assert report["user_emb"] > 1e-4
