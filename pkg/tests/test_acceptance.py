"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line; the lines are printed in the
pytest terminal summary, or directly when this file is run as a script.
"""
import functools
import math
import time

import numpy as np
import pytest

from tsautoml import autodiff as ad
from tsautoml import nets
from tsautoml.bandit import BetaState, sample_config, update
from tsautoml.bo import BayesOpt, condition, expected_improvement, KernelParams, posterior
from tsautoml.gmm import GMMParams, energy, fit_em, m_step
from tsautoml.metrics import auc, nmi
from tsautoml.search import (RunConfig, _derive, dumps_report, evaluate, prepare_splits, run_search,
                             sub_seeds, synthetic_benchmark)
from tsautoml.space import Domain, default_space
from tsautoml.train import TrainConfig, objective, overall_loss, train_model

import oracles
from test_autodiff import CASES
from test_train import _toy

RESULTS: list = []
SEEDS = range(5)


def record(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


# ---- 1: end-to-end search --------------------------------------------------

@pytest.mark.slow
def test_c01_synthetic_search():
    ds, ratios = synthetic_benchmark(0)
    cfg = RunConfig(iterations=10, bo_iters=5, seed=0, ratios=ratios, train=TrainConfig(epochs=20))
    t0 = time.perf_counter()
    rep = run_search(cfg, ds).report
    minutes = (time.perf_counter() - t0) / 60
    value = rep["test"]["value"]
    ok = value >= 0.90 and minutes <= 15
    assert record(1, "synthetic search L=10 B=5", ok,
                  f"test AUC {value:.4f} (>= 0.90), {minutes:.1f} min (<= 15)")


# ---- 2-4: ablations on a fixed pipeline ------------------------------------
# pipeline fixed; its hyperparameters picked by B BO steps on the clean val
# set; the selected model is scored once on test

SPACE = default_space(1)
FIXED = SPACE.pipeline_from_names(augmentation="timewarp", encoder="gru", decoder="rnn",
                                  similarity="rel_euclid")


@functools.lru_cache(maxsize=None)
def ablation_auc(seed, lambda2=0.5, beta=0.0, contamination=0.0, B=5, epochs=20):
    ds, ratios = synthetic_benchmark(seed, contamination=contamination)
    cfg = RunConfig(beta=beta, contamination=contamination, seed=seed, ratios=ratios)
    seeds = sub_seeds(seed)
    sp = prepare_splits(ds, cfg, seeds["data"])
    opt = BayesOpt(SPACE.active_domains(FIXED))
    best = None
    for b in range(B):
        p, hp = opt.propose(_derive(seeds["bo"], 0, b))
        tc = TrainConfig(epochs=epochs, lambda2=lambda2, seed=_derive(seeds["train"], 0, b))
        model = train_model(FIXED, hp, sp, tc)
        f = objective(model, sp.val, "anomaly")
        opt.observe(p, hp, f)
        if best is None or f > best[0]:
            best = (f, model)
    return evaluate(best[1], sp.test, "anomaly")[0].value


def median_auc(**kw):
    vals = [ablation_auc(s, **kw) for s in SEEDS]
    return float(np.median(vals)), vals


@pytest.mark.slow
def test_c02_contrastive_ablation():
    with_l2, a = median_auc(lambda2=0.5)
    without, b = median_auc(lambda2=0.0)
    ok = with_l2 >= without - 0.02
    assert record(2, "contrastive ablation", ok,
                  f"median AUC lambda2=0.5 {with_l2:.4f} vs lambda2=0 {without:.4f} (margin -0.02); "
                  f"per seed {np.round(a, 4).tolist()} vs {np.round(b, 4).tolist()}")


@pytest.mark.slow
def test_c03_irregular_sampling():
    clean, _ = median_auc()
    sparse, v = median_auc(beta=0.5)
    ok = sparse >= clean - 0.10
    assert record(3, "irregular sampling", ok,
                  f"median AUC beta=0.5 {sparse:.4f} vs beta=0 {clean:.4f} (drop {clean - sparse:.4f} "
                  f"<= 0.10); per seed {np.round(v, 4).tolist()}")


@pytest.mark.slow
@pytest.mark.parametrize("c", [0.05, 0.10])
def test_c04_contamination(c):
    clean, _ = median_auc()
    dirty, v = median_auc(contamination=c)
    drop = clean - dirty
    ok = drop <= 0.05
    assert record(4, f"contamination {c:.0%}", ok,
                  f"median AUC {dirty:.4f} vs clean {clean:.4f} (drop {drop:.4f} <= 0.05); "
                  f"per seed {np.round(v, 4).tolist()}")


# ---- 5-6: mixture model ----------------------------------------------------

def test_c05_energy_density():
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        d, H = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        A = rng.normal(size=(H, d, d))
        p = GMMParams(rng.dirichlet(np.ones(H)), rng.normal(size=(H, d)),
                      A @ np.swapaxes(A, 1, 2) + 0.3 * np.eye(d))
        y = rng.normal(size=d)
        ref = oracles.mixture_density(y, p.phi, p.mu, p.sigma)
        worst = max(worst, abs(math.exp(-energy(p, y)) - ref) / max(ref, 1.0))
    ok = worst <= 1e-9
    assert record(5, "exp(-energy) vs mixture density", ok,
                  f"max error {worst:.2e} over 1000 GMMs (<= 1e-9)")


def test_c06_m_step_and_em():
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        N, d, H = int(rng.integers(2, 12)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
        Y = rng.normal(size=(N, d))
        G = rng.dirichlet(np.ones(H), size=N)
        p = m_step(Y, G)
        phi, mu, sigma = oracles.weighted_moments(Y, G, 1e-6)
        worst = max(worst, np.abs(p.phi - phi).max(), np.abs(p.mu - mu).max(),
                    np.abs(p.sigma - sigma).max())
    drops = 0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        H = int(rng.integers(1, 4))
        Y = rng.normal(size=(int(rng.integers(H + 2, 40)), int(rng.integers(1, 4))))
        hist = fit_em(Y, H, iters=30, seed=seed, return_history=True).log_likelihood
        drops += bool(np.any(np.diff(hist) < -1e-10))
    ok = worst <= 1e-9 and drops == 0
    assert record(6, "m_step moments and EM monotonicity", ok,
                  f"max m_step error {worst:.2e} (<= 1e-9); {drops}/1000 EM runs with a "
                  f"log-likelihood decrease")


# ---- 7: gradients ----------------------------------------------------------

def test_c07_grad_check():
    prim = {}
    for name, case in CASES.items():
        prim[name] = max(ad.grad_check(f, params, eps=1e-5)
                         for params, f in (case(np.random.default_rng(s)) for s in range(20)))
    comp = 0.0
    for enc, att, sim in [("gru", "none", "both"), ("lstm", "self", "cosine"),
                          ("rnn", "none", "rel_euclid")]:
        cfg = nets.NetConfig(encoder_kind=enc, decoder_kind="gru", attention=att, sim_kind=sim,
                             h_enc=2, h_dec=2, H=2, est_nodes=8, clas_nodes=8)
        w = nets.init_weights(cfg, 1)
        pos, neg = _toy(10, T=5)
        comp = max(comp, ad.grad_check(lambda: overall_loss(pos, neg, w, cfg, 0.1, 0.5).total,
                                       list(w.values()), eps=1e-4))
    worst_name = max(prim, key=prim.get)
    ok = comp < 1e-3 and prim[worst_name] < 1e-5
    assert record(7, "gradient checks", ok,
                  f"composite loss {comp:.2e} (< 1e-3); worst primitive {worst_name} "
                  f"{prim[worst_name]:.2e} (< 1e-5) over {len(prim)} primitives")


# ---- 8: GP and BO ----------------------------------------------------------

def bo_run(seed, iters=25):
    opt = BayesOpt((Domain("theta", 0.0, 1.0),))
    for t in range(iters):
        p, hp = opt.propose(_derive(seed, t))
        opt.observe(p, hp, -(hp["theta"] - 0.3) ** 2)
    return max(opt.history, key=lambda o: o.f).values["theta"]


def test_c08_gp_and_bo():
    gp_err = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n, d, m = int(rng.integers(2, 15)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
        P, Ps, y = rng.random((n, d)), rng.random((m, d)), rng.normal(size=n)
        psi = KernelParams(float(rng.uniform(0.5, 2)), tuple(rng.uniform(0.2, 2, d)),
                           float(rng.uniform(1e-3, 1e-1)))
        gp = condition(P, y, psi, standardize=False)
        mu, var = posterior(gp, Ps)
        mu_o, var_o = oracles.gp_dense(P, y, Ps, psi.tau0, psi.taus, psi.noise)
        gp_err = max(gp_err, np.abs(mu - mu_o).max(), np.abs(var - var_o).max())
    ei = expected_improvement(0.0, 1.0, 0.0)
    bo_dist = [abs(bo_run(s) - 0.3) for s in range(20)]
    hits = sum(x <= 0.05 for x in bo_dist)
    rs_dist = [np.abs(np.random.default_rng(1000 + s).random(25) - 0.3).min() for s in range(20)]
    ok = (gp_err <= 1e-8 and abs(ei - 0.398942) <= 1e-6 and hits >= 18
          and np.median(bo_dist) < np.median(rs_dist))
    assert record(8, "GP posterior, EI and BO", ok,
                  f"GP max error {gp_err:.2e} (<= 1e-8); EI {ei:.7f} (0.398942 +- 1e-6); "
                  f"BO hits {hits}/20 (>= 18); median |theta-0.3| BO {np.median(bo_dist):.2e} "
                  f"vs random {np.median(rs_dist):.2e}")


# ---- 9: bandit -------------------------------------------------------------

def test_c09_bandit():
    probs = (0.9, 0.1)
    fracs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        state = BetaState.initial([2], 10, 10)
        picks = []
        for t in range(200):
            cfg = sample_config(state, _derive(seed, t))
            arm = cfg.choice[0]
            state = update(state, cfg, int(rng.random() < probs[arm]))
            picks.append(arm)
        fracs.append(np.mean(np.array(picks[100:]) == 0))
    mean = float(np.mean(fracs))
    ok = mean >= 0.80
    assert record(9, "Thompson sampling 0.9 vs 0.1", ok,
                  f"best arm chosen {mean:.3f} of the last 100 of 200 iterations (>= 0.80)")


# ---- 10: metrics -----------------------------------------------------------

def test_c10_metrics():
    auc_err = nmi_err = 0.0
    invariant = True
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = np.round(rng.normal(size=n), 1)   # rounding forces ties
        a = auc(scores, labels)
        auc_err = max(auc_err, abs(a - oracles.auc_pairs(scores, labels)))
        invariant &= abs(auc(np.exp(scores) * 3 + 7, labels) - a) <= 1e-12
        pred, truth = rng.integers(0, 4, n), rng.integers(0, 3, n)
        nmi_err = max(nmi_err, abs(nmi(pred, truth) - oracles.nmi_direct(pred.tolist(), truth.tolist())))
    ok = auc_err <= 1e-12 and nmi_err <= 1e-12 and invariant
    assert record(10, "AUC and NMI", ok,
                  f"max auc error {auc_err:.1e}, max nmi error {nmi_err:.1e} (<= 1e-12); "
                  f"auc invariant under increasing maps: {invariant}")


# ---- 11: determinism -------------------------------------------------------

@pytest.mark.slow
def test_c11_determinism():
    ds, ratios = synthetic_benchmark(0)
    cfg = RunConfig(iterations=2, bo_iters=3, seed=11, ratios=ratios, train=TrainConfig(epochs=3),
                    final_epochs=3)
    a, b = (run_search(cfg, ds).report for _ in range(2))
    strip = lambda r: dumps_report({k: v for k, v in r.items() if k != "timings"}).encode()
    ok = strip(a) == strip(b)
    assert record(11, "seeded search determinism", ok,
                  f"reports byte-identical without timings: {ok} ({len(strip(a))} bytes)")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
