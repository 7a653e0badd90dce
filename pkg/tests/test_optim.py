import csv
import io

import numpy as np
import pytest

from staco import core, metrics
from staco.core import ConfigError, PrimalDualState, StepSizes, TPAUCProblem
from staco.data import synth_gaussian
from staco.optim import (TRACE_COLUMNS, StacoConfig, TraceRecord, TrainingTrace,
                         baseline_auc_pairwise_train, baseline_ce_train, lr_schedule,
                         pairwise_grad, staco1_train, staco2_train)
from staco.scorers import LinearScorer, MlpScorer


@pytest.fixture(scope="module")
def small():
    return synth_gaussian(20, 60, 4, 1.5, seed=0)


def _cfg(**kw):
    base = dict(S=5, B=8, T=60, K=10, eval_every=20)
    base.update(kw)
    return StacoConfig(**base)


# -- schedule ------------------------------------------------------------

def test_lr_schedule():
    s = StepSizes(1.0, 2.0, 3.0, 4.0)
    assert lr_schedule(s, 0, (500, 1500, 2500), 0.1) == s
    out = lr_schedule(s, 1600, (500, 1500, 2500), 0.1)
    np.testing.assert_allclose([out.alpha, out.beta, out.eta, out.beta_prime], [0.01, 0.02, 0.03, 0.04])
    assert lr_schedule(s, 10**6, (1, 2, 3), 1.0) == s
    assert lr_schedule(s, 500, (500,), 0.5).eta == 1.5


# -- config ----------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(S=0), dict(S=21), dict(B=61), dict(eta=-1.0), dict(alpha=float("nan")),
                                dict(K=0), dict(gamma=0.0), dict(decay_factor=0.0),
                                dict(decay_milestones=(5, 2)), dict(theta0=0.01), dict(eval_every=0)])
def test_config_rejected_before_iterating(small, kw):
    calls = []
    with pytest.raises(ConfigError):
        staco1_train(small, _cfg(**kw), LinearScorer(4), callback=lambda *a: calls.append(a))
    assert calls == []


# -- trace -----------------------------------------------------------------

def test_trace_columns_and_order():
    tr = TrainingTrace()
    tr.append(TraceRecord(1, 0.1, 0.2, 0.5, 0.5, 1.0, 0.3))
    with pytest.raises(ValueError):
        tr.append(TraceRecord(1, 0.1, 0.2, 0.5, 0.5, 1.0, 0.3))
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0] == TRACE_COLUMNS
    assert rows[1][-1] == ""


def test_trace_cadence_and_timing(small):
    res = staco1_train(small, _cfg(T=65), LinearScorer(4))
    assert [r.iter for r in res.trace] == [20, 40, 60, 65]
    assert all(r.ms is None for r in res.trace)
    res = staco1_train(small, _cfg(T=20, record_time=True), LinearScorer(4))
    assert res.trace[-1].ms > 0


# -- STACO1 ----------------------------------------------------------------

def test_staco1_t0_noop(small):
    sc = LinearScorer(4, [0.1, 0.2, 0.3, 0.4])
    res = staco1_train(small, _cfg(T=0), sc)
    np.testing.assert_array_equal(res.scorer.params, sc.params)
    np.testing.assert_array_equal(res.s, np.ones(20))
    assert res.s_prime == 1.0 and len(res.trace) == 0


@pytest.mark.parametrize("make", [lambda: LinearScorer(4), lambda: MlpScorer.init_random(4, 3, seed=2)])
def test_staco1_deterministic(small, make):
    a = staco1_train(small, _cfg(seed=3), make())
    b = staco1_train(small, _cfg(seed=3), make())
    assert a.trace.to_csv() == b.trace.to_csv()
    assert a.scorer.params.tobytes() == b.scorer.params.tobytes()
    c = staco1_train(small, _cfg(seed=4), make())
    assert c.scorer.params.tobytes() != a.scorer.params.tobytes()


def test_staco1_average_of_snapshots(small):
    snaps = []
    res = staco1_train(small, _cfg(T=37), LinearScorer(4),
                       callback=lambda t, st: snaps.append((st.params.copy(), st.s.copy(), st.s_prime)))
    assert len(snaps) == 37
    np.testing.assert_allclose(res.scorer.params, np.mean([p for p, _, _ in snaps], axis=0), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(res.s, np.mean([s for _, s, _ in snaps], axis=0), rtol=1e-12)
    assert res.s_prime == pytest.approx(np.mean([sp for _, _, sp in snaps]), rel=1e-12)
    # the trace follows the current iterate
    assert res.trace[-1].w_norm == pytest.approx(np.linalg.norm(snaps[-1][0]), rel=1e-14)


def test_staco1_decreases_objective(small):
    prob = TPAUCProblem(small, 0.5, 0.5)
    start = core.exact_objective_eq1(prob, LinearScorer(4))
    res = staco1_train(small, _cfg(T=400), LinearScorer(4))
    assert core.exact_objective_eq1(prob, res.scorer) < 0.5 * start


def test_staco1_first_step_by_hand(small):
    """One iteration from the initial point against a from-scratch computation."""
    cfg = _cfg(T=1, seed=11)
    seen = {}
    res = staco1_train(small, cfg, LinearScorer(4), backend="generic",
                       callback=lambda t, st: seen.setdefault("st", st.copy()))
    from staco.rng import make_rng
    r = make_rng(11, "staco")
    S_t = np.sort(r.choice(20, 5, replace=False))
    ell = cfg.loss
    # at w = 0 every pairwise loss is ell(0) = 0.25 and s = s' = 1, y = 1
    g_hat = 1.0 + np.maximum(0.0, ell(0.0) - 1.0) / 0.5
    y = np.clip(1.0 + 0.1 * (g_hat - 1.0) / 0.5, 0, 1)
    assert y == 1.0
    # no pair is active (0.25 < 1): ds = 1, dw = 0
    s_expected = np.ones(20)
    s_expected[S_t] = 1.0 - (0.1 / 0.5) * 1.0
    np.testing.assert_allclose(seen["st"].s, s_expected)
    np.testing.assert_array_equal(seen["st"].params, np.zeros(4))
    assert seen["st"].s_prime == pytest.approx(1.0 - 0.1 * (1.0 - 5 / (0.5 * 5)))
    assert res.trace[0].iter == 1


# -- STACO2 ----------------------------------------------------------------

def test_staco2_y_reset_each_stage(small):
    K = 7
    starts = []

    def cb(it, st):
        if it % K == 0:
            starts.append(bool(np.all(st.y == 1.0)))
        st.y[:] = 0.3

    # alpha = 0 keeps y where it was, so only a stage reset can restore ones
    staco2_train(small, _cfg(T=4, K=K, alpha=0.0), LinearScorer(4), callback=cb)
    assert starts == [True] * 4


@pytest.mark.parametrize("backend", ["generic", None])
def test_staco2_large_gamma_matches_staco1(small, backend):
    T = 150
    a_snaps, b_snaps = [], []
    r1 = staco1_train(small, _cfg(T=T, seed=5), LinearScorer(4), backend=backend,
                      callback=lambda t, st: a_snaps.append(np.r_[st.params, st.s, st.s_prime]))
    r2 = staco2_train(small, _cfg(T=1, K=T, seed=5, gamma=1e7), LinearScorer(4), backend=backend,
                      callback=lambda t, st: b_snaps.append(np.r_[st.params, st.s, st.s_prime]))
    assert np.max(np.abs(np.array(a_snaps) - np.array(b_snaps))) < 1e-6
    assert np.max(np.abs(r1.scorer.params - r2.scorer.params)) < 1e-6


def test_staco2_frozen_primal(small):
    w0 = np.array([0.3, -0.2, 0.1, 0.5])
    cfg = _cfg(T=5, K=1, alpha=0.0, beta=0.0, eta=0.0, beta_prime=0.2)
    sps = []
    res = staco2_train(small, cfg, LinearScorer(4, w0), callback=lambda t, st: sps.append(st.s_prime))
    np.testing.assert_array_equal(res.scorer.params, w0)
    np.testing.assert_array_equal(res.s, np.ones(20))
    # y stays at one, so s' drifts by -beta' (1 - 1/theta0) = +0.2 each stage
    np.testing.assert_allclose(sps, 1.0 + 0.2 * np.arange(1, 6))
    assert res.stage_moves == [0.0] * 5


def test_staco2_mlp_stage_movement_shrinks():
    ds = synth_gaussian(50, 500, 5, 1.0, seed=0)
    shrunk = 0
    for seed in range(5):
        cfg = StacoConfig(S=16, B=16, T=30, K=50, gamma=10.0, eta=0.5, alpha=0.1, beta=0.1,
                          beta_prime=0.1, decay_milestones=(500, 1000), decay_factor=0.1,
                          seed=seed, eval_every=10**6)
        moves = staco2_train(ds, cfg, MlpScorer.init_random(5, 8, seed=seed)).stage_moves
        shrunk += moves[-1] < moves[0]
    assert shrunk >= 4


def test_staco2_trace_records_stage_move(small):
    res = staco2_train(small, _cfg(T=6, K=10, eval_every=20), LinearScorer(4))
    assert [r.iter for r in res.trace] == [20, 40, 60]
    assert res.trace[-1].stage_move == res.stage_moves[-1]


# -- baselines ---------------------------------------------------------------

def test_ce_block_means_decrease():
    ds = synth_gaussian(200, 200, 5, 3.0, 0)
    res = baseline_ce_train(ds, StacoConfig(eta=0.1, S=16, B=16, T=2000, eval_every=1000), LinearScorer(5))
    blocks = res.losses.reshape(4, -1).mean(axis=1)
    assert np.all(np.diff(blocks) <= 0)
    te = synth_gaussian(200, 200, 5, 3.0, 1)
    assert metrics.auc(res.scorer.scores(te.features), te.labels) > 0.9


@pytest.mark.parametrize("train", [baseline_ce_train, baseline_auc_pairwise_train])
@pytest.mark.parametrize("make", [lambda: LinearScorer(4, [0.1, 0.2, -0.3, 0.0]),
                                  lambda: MlpScorer.init_random(4, 3, seed=1)])
def test_baseline_zero_step_noop(small, train, make):
    sc = make()
    res = train(small, _cfg(eta=0.0, T=30), sc)
    np.testing.assert_array_equal(res.scorer.params, sc.params)


def test_pairwise_sep3_auc():
    ds = synth_gaussian(50, 500, 5, 3.0, 0)
    res = baseline_auc_pairwise_train(ds, StacoConfig(eta=0.1, S=10, B=50, T=500, eval_every=500),
                                      LinearScorer(5))
    te = synth_gaussian(50, 500, 5, 3.0, 1)
    assert metrics.auc(res.scorer.scores(te.features), te.labels) > 0.95


@pytest.mark.parametrize("theta1", [1.0, 0.5])
def test_pairwise_grad_matches_staco_direction(small, theta1):
    prob = TPAUCProblem(small, 1.0, theta1)
    rng = np.random.default_rng(0)
    sc = LinearScorer(4, rng.normal(size=4))
    sampled, batch = np.arange(6), rng.choice(60, 10, replace=False)
    # s very negative: every hinge active, y = 1
    state = PrimalDualState(sc.params, np.full(20, -1e6), 0.0, np.ones(20))
    staco = np.mean([core.g_subgrads(prob, sc, state, i, batch)[0] for i in sampled], axis=0)
    np.testing.assert_allclose(staco, pairwise_grad(prob, sc, sampled, batch) / theta1, rtol=1e-12)
