"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest
from scipy.special import log_softmax

from censurv.cli import main
from censurv.core import CensoringStatus as S
from censurv.core import Dataset, TimeGrid, write_dataset
from censurv.cox import MemoryBank, cox_partial_ll, coxmb_objective
from censurv.datagen import GroundTruth, generate_centime
from censurv.distributions import DiscGaussParams, disc_gauss_log_pmf, pmf_to_cdf
from censurv.experiments import DataSpec, ExperimentSpec, summarize, sweep_results
from censurv.likelihoods import (centime_interval_censored_ll, centime_left_censored_ll,
                                 centime_right_censored_ll, chain_cdf,
                                 classical_right_censored_ll, classical_uncensored_ll,
                                 deephit_rank_loss)
from censurv.metrics import c_index, mae, rae
from censurv.models import Architecture, PredictorConfig, backward, forward
from censurv.training import (Objective, TrainConfig, epoch_batches, evaluate, head_loss,
                              train)
from oracles import (brute_c_index, central_diff, centime_interval_law, centime_left_law,
                     centime_right_law, classical_joint_law, random_pmf, rel_err)

# desk-scale training budget, shared by every method in the experiments
DESK = {"lr": 3e-3, "epochs": 300, "batch_size": 32}


@pytest.fixture
def report(capsys):
    def _report(tag, ok, detail):
        with capsys.disabled():
            print(f"\n[{tag}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, f"{tag}: {detail}"
    return _report


def _log_rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_ac1_likelihood_mechanism_oracle(report):
    start = time.perf_counter()
    worst = 0.0
    n_checks = 0
    rng = np.random.default_rng(101)
    for T in (4, 8, 12):
        for _ in range(20):
            pmf = random_pmf(rng, T)
            lp = np.log(pmf)
            right, left, inter = (centime_right_law(pmf), centime_left_law(pmf),
                                  centime_interval_law(pmf))
            cens, unc = classical_joint_law(pmf)
            pairs = []
            for c in range(1, T):
                pairs.append((centime_right_censored_ll(lp, c), math.log(right[c])))
                pairs.append((classical_right_censored_ll(lp, c, full=True),
                              math.log(cens[c])))
            for c in range(2, T + 1):
                pairs.append((centime_left_censored_ll(lp, c), math.log(left[c])))
            for t in range(1, T + 1):
                pairs.append((classical_uncensored_ll(lp, t), math.log(unc[t])))
            for c1 in range(1, T - 1):
                for c2 in range(c1 + 2, T + 1):
                    pairs.append((centime_interval_censored_ll(lp, c1, c2),
                                  math.log(inter[c1, c2])))
            for got, want in pairs:
                worst = max(worst, _log_rel(got, want))
            n_checks += len(pairs)
    elapsed = time.perf_counter() - start
    report("AC1", worst < 1e-10 and elapsed < 10,
           f"{n_checks} terms, max rel err {worst:.2e}, {elapsed:.1f}s")


def _objective_instance(rng, objective, arch):
    d = int(rng.integers(1, 5))
    T = int(rng.integers(3, 13))
    n = int(rng.integers(1, 7))
    cfg = TrainConfig(objective, sigma=float(rng.uniform(1.0, 4.0)))
    pcfg = PredictorConfig(d=d, head=cfg.head, architecture=arch, hidden=int(rng.integers(2, 6)),
                           t_max=T, seed=int(rng.integers(10_000)))
    if objective is Objective.CENTIME:
        kinds = (S.UNCENSORED, S.RIGHT, S.LEFT, S.INTERVAL)
    else:
        kinds = (S.UNCENSORED, S.RIGHT)
    status, t1, t2 = [], [], []
    for k in range(n):
        s = kinds[rng.integers(len(kinds))]
        if objective in (Objective.COX, Objective.COXMB, Objective.DEEPHIT) and k == 0:
            s = S.UNCENSORED
        if s == S.UNCENSORED:
            t1.append(int(rng.integers(1, T + 1))); t2.append(0)
        elif s == S.RIGHT:
            t1.append(int(rng.integers(1, T))); t2.append(0)
        elif s == S.LEFT:
            t1.append(int(rng.integers(2, T + 1))); t2.append(0)
        else:
            lo = int(rng.integers(1, T - 1))
            t1.append(lo); t2.append(int(rng.integers(lo + 2, T + 1)))
        status.append(s)
    ds = Dataset(rng.normal(size=(n, d)), status, t1, t2, grid=TimeGrid(T))
    params = rng.normal(scale=0.7, size=pcfg.n_params)
    return cfg, pcfg, ds, params


def _composed(objective, cfg, pcfg, ds, params, rng):
    """(loss(params), analytic gradient) for one objective through the predictor."""
    X = ds.X
    if objective == "rank":
        def value(p):
            lp = log_softmax(forward(pcfg, p, X), axis=-1)
            return deephit_rank_loss(ds, pmf_to_cdf(np.exp(lp)), cfg.s).value
        lp = log_softmax(forward(pcfg, params, X), axis=-1)
        rk = deephit_rank_loss(ds, pmf_to_cdf(np.exp(lp)), cfg.s)
        return value, backward(pcfg, params, X, chain_cdf(rk.grad, lp))
    if cfg.objective is Objective.COXMB:
        n_old = int(rng.integers(1, 6))
        old_g = rng.normal(size=n_old)
        old_s = np.where(rng.random(n_old) < 0.5, S.UNCENSORED, S.RIGHT)
        old_t = rng.integers(1, ds.t_max + 1, size=n_old)

        def loss(p):
            bank = MemoryBank(1.0, 20)
            bank.push(old_g, old_s, old_t, 0)
            g = forward(pcfg, p, X)
            bank.push(g, ds.status, ds.time, 1)
            rep = coxmb_objective(bank, g, ds.status, ds.time, 1)
            return -rep.value, -rep.grad

        return (lambda p: loss(p)[0]), backward(pcfg, params, X, loss(params)[1])
    rep = head_loss(cfg, ds, forward(pcfg, params, X))
    return (lambda p: head_loss(cfg, ds, forward(pcfg, p, X)).value,
            backward(pcfg, params, X, rep.grad))


def test_ac2_gradient_suite(report):
    start = time.perf_counter()
    objectives = [Objective.CENTIME, Objective.CLASSICAL, Objective.DEEPHIT_LIK, "rank",
                  Objective.DEEPHIT, Objective.COX, Objective.COXMB]
    worst = {}
    rng = np.random.default_rng(202)
    for obj in objectives:
        for arch in Architecture:
            errs = []
            for _ in range(50):
                base = Objective.DEEPHIT if obj == "rank" else obj
                cfg, pcfg, ds, params = _objective_instance(rng, base, arch)
                value, an = _composed(obj, cfg, pcfg, ds, params, rng)
                fd = central_diff(value, params, h=1e-6)
                errs.append(rel_err(an, fd))
            name = obj if isinstance(obj, str) else obj.value
            worst[f"{name}/{arch.value}"] = max(errs)
    elapsed = time.perf_counter() - start
    top = max(worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report("AC2", top < 1e-5 and elapsed < 60,
           f"max rel err {top:.2e} over {len(worst)} combos x 50, {elapsed:.1f}s ({detail})")


GT = GroundTruth()


def _ac3_repeat(r):
    rng = np.random.default_rng([303, r])
    tr = generate_centime(GT, 0, 2000, rng)
    va = generate_centime(GT, 105, 195, rng)
    te = generate_centime(GT, 150, 280, rng)
    out = {}
    for method in ("centime", "classical"):
        cfg = TrainConfig(method, seed=r, **DESK)
        pcfg = PredictorConfig(d=2, head=cfg.head, seed=r)
        params, _ = train(cfg, tr, va, pcfg)
        out[method] = evaluate(params, pcfg, te, cfg)[1].mae
    return tr, out


def test_ac3_consistency_under_pure_censoring(report, tmp_path):
    start = time.perf_counter()
    wins, lines, trains = 0, [], []
    for r in range(5):
        tr, m = _ac3_repeat(r)
        trains.append(tr)
        wins += m["centime"] < m["classical"]
        lines.append(f"r{r}: {m['centime']:.2f} vs {m['classical']:.2f}")
    data = tmp_path / "data"
    data.mkdir()
    write_dataset(trains[0], data / "train.csv")
    write_dataset(trains[0], data / "val.csv")
    cfg = tmp_path / "cox.toml"
    cfg.write_text(f'[data]\ntrain = "{data / "train.csv"}"\nval = "{data / "val.csv"}"\n'
                   '[train]\nobjective = "cox"\n')
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "cox")])
    elapsed = time.perf_counter() - start
    report("AC3", wins >= 4 and code == 3 and elapsed < 600,
           f"CenTime MAE < classical MAE in {wins}/5 ({'; '.join(lines)}), "
           f"cox exit {code}, {elapsed:.0f}s")


def test_ac4_sweep_monotonicity(report):
    start = time.perf_counter()
    spec = ExperimentSpec(methods=("centime", "classical"), data=DataSpec(n=1000),
                          n_repeats=5, seed=404, train=dict(DESK))
    cells = sweep_results(spec)
    rows = [{"method": c.method, "fraction": c.fraction, "repeat": c.repeat,
             "c_index": c.metrics.c_index, "mae": c.metrics.mae, "rae": c.metrics.rae}
            for c in cells]
    means = {(s["method"], s["fraction"]): s["mae_mean"] for s in summarize(rows)}
    ct = [means[("centime", f)] for f in spec.fractions]
    cl = [means[("classical", f)] for f in spec.fractions]
    ok_trend = ct[-1] < ct[0]
    ok_gap = all(a <= b + 1.0 for a, b in zip(ct, cl))
    elapsed = time.perf_counter() - start
    table = ", ".join(f"{f:g}: {a:.2f}/{b:.2f}" for f, a, b in zip(spec.fractions, ct, cl))
    report("AC4", ok_trend and ok_gap and elapsed < 1800,
           f"mean MAE centime/classical by fraction [{table}], {elapsed:.0f}s")


def test_ac5_coxmb_reductions(report):
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    bank = MemoryBank(0.0, 100)
    exact = True
    for it in range(100):
        n = int(rng.integers(1, 9))
        g = rng.normal(size=n)
        t = rng.integers(1, 20, size=n)
        s = np.where(rng.random(n) < 0.5, S.UNCENSORED, S.RIGHT)
        bank.push(g, s, t, it)
        a, b = coxmb_objective(bank, g, s, t, it), cox_partial_ll(g, t, s)
        same_value = (a.value == b.value) or (math.isnan(a.value) and math.isnan(b.value))
        exact &= same_value and np.array_equal(a.grad, b.grad) and a.skipped == b.skipped

    gt = GroundTruth()
    data_rng = np.random.default_rng([505, 1])
    tr = generate_centime(gt, 30, 170, data_rng)
    va = generate_centime(gt, 30, 30, data_rng)
    pcfg = PredictorConfig(d=2, head="risk")
    base = {"lr": 5e-3, "epochs": 5, "batch_size": 2, "seed": 5}
    _, cox_log = train(TrainConfig("cox", **base), tr, va, pcfg)
    _, mb_log = train(TrainConfig("coxmb", K=1.0, **base), tr, va, pcfg)
    expected = [sum(not tr.uncensored[b].any() for b in epoch_batches(len(tr), 2, 5, e))
                for e in range(1, 6)]
    cox_skips = [r.skipped_batches for r in cox_log.records]
    mb_skips = [r.skipped_batches for r in mb_log.records]
    n_batches = len(epoch_batches(len(tr), 2, 5, 1))
    elapsed = time.perf_counter() - start
    ok = exact and cox_skips == expected and all(k == 0 for k in mb_skips) and elapsed < 300
    report("AC5", ok,
           f"K=0 exact on 100 batches: {exact}; cox skips {cox_skips} vs all-censored "
           f"{expected} of {n_batches}; coxmb skips {mb_skips}; {elapsed:.1f}s")


def test_ac6_metric_correctness(report):
    start = time.perf_counter()
    rng = np.random.default_rng(606)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        scores = rng.integers(-2, 3, size=n).astype(float)
        times = rng.integers(1, 6, size=n)
        statuses = np.where(rng.random(n) < 0.6, S.UNCENSORED, S.RIGHT)
        conc, pairs = brute_c_index(scores, times, statuses)
        got = c_index(scores, times, statuses)
        if pairs == 0:
            mismatches += not math.isnan(got)
        else:
            mismatches += got != conc / pairs
    U, R = S.UNCENSORED, S.RIGHT
    hand = [
        mae([10, 20], [12, 16], [U, U]) == 3.0,
        mae([12, 16], [12, 16], [U, U]) == 0.0,
        mae([5, 1], [9, 4], [U, R]) == 4.0,
        rae([10, 20], [12, 16], [U, U]) == (2 / 12 + 4 / 16) / 2,
        abs(rae([10, 20], [12, 16], [U, U]) - 5 / 24) <= 2 ** -52 * 5 / 24,
        rae([12, 16], [12, 16], [U, U]) == 0.0,
        c_index([3, 1, 2], [1, 2, 3], [U, U, U]) == 1 / 3,
        c_index([1, 2, 3], [1, 2, 3], [U, U, U]) == 1.0,
        c_index([7, 7, 7], [1, 2, 3], [U, U, U]) == 0.5,
    ]
    elapsed = time.perf_counter() - start
    report("AC6", mismatches == 0 and all(hand) and elapsed < 30,
           f"{mismatches} mismatches in 1000 random cases, hand cases {sum(hand)}/{len(hand)}, "
           f"{elapsed:.1f}s")


def test_ac7_distribution_invariants(report):
    start = time.perf_counter()
    worst, non_finite, n = 0.0, 0, 0
    for T in (2, 156, 1000):
        grid = TimeGrid(T)
        mus = np.concatenate([np.linspace(-10 * T, 10 * T, 201), [1.0, float(T), 0.5 * T]])
        for sigma in np.geomspace(1e-3, 10 * T, 40):
            lp = disc_gauss_log_pmf(DiscGaussParams(mus, float(sigma)), grid)
            non_finite += int(np.sum(~np.isfinite(lp)))
            worst = max(worst, float(np.max(np.abs(np.exp(lp).sum(axis=1) - 1.0))))
            n += len(mus)
    elapsed = time.perf_counter() - start
    report("AC7", worst <= 1e-12 and non_finite == 0 and elapsed < 10,
           f"{n} (mu, sigma) pairs, max |sum - 1| {worst:.1e}, {non_finite} non-finite, "
           f"{elapsed:.1f}s")


GEN_CFG = """
seed = 8
[ground_truth]
beta = [4.0, -3.0]
bias = 20.0
sigma_true = 4.0
t_max = 40
[data]
n = 300
"""

SWEEP_CFG = """
methods = ["centime", "classical", "deephit", "cox", "coxmb"]
fractions = [0.0, 0.5, 1.0]
n_repeats = 2
""" + GEN_CFG + """
[train]
lr = 0.01
epochs = 5
batch_size = 32
sigma = 4.0
"""


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_ac8_cli_determinism(report, tmp_path, monkeypatch):
    gen = tmp_path / "gen.toml"
    gen.write_text(GEN_CFG)
    sweep = tmp_path / "sweep.toml"
    # top-level keys must precede tables in TOML
    sweep.write_text(SWEEP_CFG)
    results = {}
    for run in ("a", "b"):
        data = tmp_path / run / "data"
        codes = [main(["generate", "--config", str(gen), "--out", str(data)])]
        for method in ("centime", "deephit", "coxmb"):
            tcfg = tmp_path / run / f"train_{method}.toml"
            tcfg.write_text(f'[data]\nt_max = 40\ntrain = "{data / "train.csv"}"\n'
                            f'val = "{data / "val.csv"}"\n[train]\nobjective = "{method}"\n'
                            "lr = 0.01\nepochs = 5\nsigma = 4.0\n")
            codes.append(main(["train", "--config", str(tcfg),
                               "--out", str(tmp_path / run / method)]))
            ecfg = tmp_path / run / f"eval_{method}.toml"
            ecfg.write_text(f'checkpoint = "{tmp_path / run / method / "model.ckpt"}"\n'
                            f'[data]\nt_max = 40\ntest = "{data / "test.csv"}"\n'
                            f'baseline = "{data / "train.csv"}"\n')
            codes.append(main(["evaluate", "--config", str(ecfg),
                               "--out", str(tmp_path / run / f"eval_{method}")]))
        if run == "b":
            monkeypatch.setenv("CENSURV_THREADS", "2")
        codes.append(main(["sweep", "--config", str(sweep), "--out", str(tmp_path / run / "sw")]))
        assert all(c == 0 for c in codes), codes
        results[run] = {sub: _snapshot(tmp_path / run / sub) for sub in
                        ("data", "centime", "deephit", "coxmb", "eval_centime", "eval_deephit",
                         "eval_coxmb", "sw")}
    differing = [f"{sub}/{name}" for sub in results["a"] for name in results["a"][sub]
                 if results["a"][sub][name] != results["b"][sub].get(name)]
    n_files = sum(len(v) for v in results["a"].values())
    report("AC8", not differing,
           f"{n_files} output files across generate/train/evaluate/sweep compared, "
           f"differing: {differing or 'none'} (second sweep run with 2 workers)")
