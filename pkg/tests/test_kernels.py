import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from staco import _pykernels, core, kernels
from staco.core import PrimalDualState, StageAnchor, StepSizes, SurrogateLoss, TPAUCProblem
from staco.data import synth_gaussian
from staco.optim import StacoConfig, staco1_train, staco2_train
from staco.scorers import LinearScorer

needs_ext = pytest.mark.skipif(not kernels.compiled_available(), reason="compiled extension not built")
BACKENDS = ["python", pytest.param("cython", marks=needs_ext)]


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), code=st.sampled_from([0, 1, 2]), limit=st.integers(0, 12))
def test_excess_rowsums_against_loops(name, seed, code, limit):
    k = kernels.get_backend(name)
    rng = np.random.default_rng(seed)
    hp = rng.normal(size=5)
    hn = np.sort(rng.normal(size=12))[::-1].copy()
    thr = rng.uniform(-0.5, 2.0, size=5)
    got = k.excess_rowsums(hp, hn, thr, limit, code, 0.5)
    ell = SurrogateLoss(["squared_hinge", "hinge", "logistic"][code], 0.5)
    want = [sum(max(0.0, float(ell(hn[j] - hp[i])) - thr[i]) for j in range(limit)) for i in range(5)]
    np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-15)


def _step_inputs(seed, anchor):
    rng = np.random.default_rng(seed)
    ds = synth_gaussian(9, 14, 3, 1.0, seed)
    w = rng.normal(size=3)
    s = rng.normal(size=9)
    y = rng.uniform(size=9)
    sampled = np.sort(rng.choice(9, 4, replace=False)).astype(np.intp)
    batch = rng.choice(14, 5, replace=False).astype(np.intp)
    bt = rng.choice(14, 5, replace=False).astype(np.intp)
    anc = (rng.normal(size=3), rng.normal(size=9), 0.25) if anchor else (None, None, 0.0)
    return ds, w, s, y, sampled, batch, bt, anc


@pytest.mark.parametrize("name", BACKENDS)
@pytest.mark.parametrize("kind", ["squared_hinge", "hinge", "logistic"])
@pytest.mark.parametrize("anchor", [False, True])
@pytest.mark.parametrize("wd", [0.0, 0.01])
def test_linear_step_matches_generic(name, kind, anchor, wd):
    k = kernels.get_backend(name)
    for seed in range(5):
        ds, w, s, y, sampled, batch, bt, (wa, sa, inv_g) = _step_inputs(seed, anchor)
        ell = SurrogateLoss(kind, 0.5)
        prob = TPAUCProblem(ds, 0.5, 0.4, ell)
        steps = StepSizes(0.3, 0.2, 0.1, 0.05)
        ref = PrimalDualState(w.copy(), s.copy(), 0.4, y.copy())
        anc = StageAnchor(wa, sa, 1 / inv_g) if anchor else None
        core.staco_step(prob, LinearScorer(3), ref, sampled, batch, bt, steps, anc, wd)
        w2, s2, y2 = w.copy(), s.copy(), y.copy()
        sp = k.linear_step(prob.X_pos, prob.X_neg, w2, s2, y2, 0.4, sampled, batch, bt,
                           0.5, 0.4, ell.code, 0.5, 0.3, 0.2, 0.1, 0.05, wd, wa, sa, inv_g)
        np.testing.assert_allclose(w2, ref.params, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(s2, ref.s, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(y2, ref.y, rtol=1e-13, atol=1e-15)
        assert sp == pytest.approx(ref.s_prime, rel=1e-13, abs=1e-15)


@needs_ext
@pytest.mark.parametrize("train", [staco1_train, staco2_train])
def test_full_runs_agree_across_backends(train):
    ds = synth_gaussian(30, 90, 5, 1.0, 1)
    cfg = StacoConfig(S=8, B=16, T=40, K=5, eval_every=10, weight_decay=1e-3, seed=2)
    runs = {b: train(ds, cfg, LinearScorer(5), backend=b) for b in ("generic", "python", "cython")}
    base = runs["generic"]
    for b in ("python", "cython"):
        np.testing.assert_allclose(runs[b].scorer.params, base.scorer.params, rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(runs[b].trace.column("obj_eq1"), base.trace.column("obj_eq1"), rtol=1e-9)


def test_backend_rejects_nonlinear():
    from staco.scorers import MlpScorer
    ds = synth_gaussian(10, 20, 2, 1.0, 0)
    with pytest.raises(ValueError):
        staco1_train(ds, StacoConfig(S=2, B=2, T=1), MlpScorer(2, 2), backend="python")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_env_var_forces_python_fallback():
    code = "import staco.kernels as k; print(k.BACKEND, k.excess_rowsums is k.python_excess_rowsums)"
    env = dict(os.environ, STACO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "True"]


@needs_ext
def test_default_backend_is_compiled():
    if os.environ.get("STACO_PURE_PYTHON", "") not in ("", "0"):
        pytest.skip("fallback forced by environment")
    assert kernels.BACKEND == "cython"
    assert kernels.linear_step is not _pykernels.linear_step
