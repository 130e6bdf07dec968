"""Acceptance suite, one test per criterion.

Each test records a ``PASS``/``FAIL`` line (printed at the end of the pytest
run by the hook in ``conftest.py``) and then asserts.  Experiment settings
for the synthetic-recovery criteria were frozen after pilot runs.
"""

import csv
import itertools
import time

import numpy as np
import pytest
from scipy import integrate
from scipy.optimize import linear_sum_assignment
from scipy.stats import multivariate_normal

from hierface import cli, gauss
from hierface.gauss import Gaussian, LinearGaussian
from hierface.learning import LearnConfig, TrainTrace, structure_em
from hierface.model import (
    dumps_model,
    infer_batch,
    load_model,
    log_evidence,
    models_equal,
    posterior_over_configs,
    query_joint_states,
    query_state_given_label,
    save_model,
)
from hierface.network import CPT_FLOOR
from hierface.shapes import load_dataset, normalized_error, save_dataset
from hierface.synth import COUPLED_EDGES, TEMPLATE_FACE, make_generator, synthesize

from conftest import ACCEPTANCE_LINES, brute_force_log_table, random_spd, random_toy_model

# frozen experiment settings
RECOVERY = dict(strength=0.85, n=5000, seeds=range(10), min_success=8, mean_tol=0.05)
AMBIGUOUS = dict(strength=0.9, state_spread=0.03, shape_sd=0.01, noise_sd=0.06)
TV_THRESHOLD = 0.3


def record(number, name, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def _tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# -- 1. inference oracle -----------------------------------------------------------

def _brute_query(net, query, clamp):
    out = np.zeros([net.card(q) for q in query])
    for cfg in itertools.product(*[range(c) for c in net.cards]):
        if any(cfg[net.index[k]] != v for k, v in clamp.items()):
            continue
        logp = 0.0
        for n in net.nodes:
            key = tuple(cfg[net.index[a]] for a in net.parents[n]) + (cfg[net.index[n]],)
            logp += np.log(max(net.cpts[n][key], CPT_FLOOR))
        out[tuple(cfg[net.index[q]] for q in query)] += np.exp(logp)
    return np.log(out / out.sum())


def test_criterion_1_inference_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    n_models = 60
    for seed in range(n_models):
        rng = np.random.default_rng(seed)
        model = random_toy_model(rng, max_card=3, tied=bool(seed % 2))
        net = model.network
        for _ in range(2):
            xm = rng.normal(size=2 * model.partition.num_points)
            oracle = brute_force_log_table(model, xm)
            norm = np.log(np.sum(np.exp(oracle - oracle.max()))) + oracle.max()
            worst = max(worst, np.max(np.abs(posterior_over_configs(model, xm).table - (oracle - norm))))
            worst = max(worst, abs(log_evidence(model, xm) - norm))
        for z in ("Z_eb", "Z_e", "Z_n", "Z_m"):
            e = int(rng.integers(net.card("E")))
            got = np.log(query_state_given_label(model, z, {"E": e}))
            worst = max(worst, np.max(np.abs(got - _brute_query(net, [z], {"E": e}))))
        for a, b in (("Z_eb", "Z_m"), ("Z_e", "Z_n")):
            got = np.log(query_joint_states(model, a, b))
            worst = max(worst, np.max(np.abs(got - _brute_query(net, [a, b], {}))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 60
    record(1, "inference matches brute force", ok,
           f"{n_models} models, max log error {worst:.2e}, {elapsed:.1f}s")
    assert ok


# -- 2. Gaussian algebra oracle ----------------------------------------------------

def _grid(prior, n):
    sd = np.sqrt(np.diag(prior.cov))
    axes = [np.linspace(m - 9 * s, m + 9 * s, n) for m, s in zip(prior.mean, sd)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([g.ravel() for g in mesh], axis=1)


def _integrate(values, axes):
    out = values.reshape([len(a) for a in axes])
    for a in reversed(axes):
        out = integrate.trapezoid(out, a, axis=-1)
    return out


def _quadrature_instance(rng, d):
    prior = Gaussian(rng.normal(size=d), random_spd(rng, d))
    gain = rng.normal(size=(d, d))
    gain *= min(1.0, 2.0 / np.linalg.norm(gain, 2))
    lik = LinearGaussian(rng.normal(size=d), gain, random_spd(rng, d, 0.3))
    x = gauss.sample(prior, 1, int(rng.integers(2**31)))[0]
    obs = lik.predict(x) + np.linalg.cholesky(lik.noise_cov) @ rng.normal(size=d)
    axes, pts = _grid(prior, 2001 if d == 1 else 701)
    # integrand from scipy densities, independent of the code under test
    pred = pts @ gain.T + lik.offset
    w = multivariate_normal(prior.mean, prior.cov).pdf(pts).reshape(-1) * np.exp(
        multivariate_normal(np.zeros(d), lik.noise_cov).logpdf(obs - pred).reshape(-1))
    z = _integrate(w, axes)
    mean = np.array([_integrate(w * pts[:, i], axes) for i in range(d)]) / z
    c = pts - mean
    cov = np.array([[_integrate(w * c[:, i] * c[:, j], axes) for j in range(d)] for i in range(d)]) / z
    post = gauss.posterior_update(prior, lik, obs)
    evidence = gauss.log_density(gauss.marginal_likelihood(prior, lik), obs)
    return max(np.max(np.abs(post.mean - mean)), np.max(np.abs(post.cov - cov)), abs(evidence - np.log(z)))


def test_criterion_2_gaussian_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    quad = max(_quadrature_instance(rng, 1 + i % 2) for i in range(100))
    cons = 0.0
    for seed in range(1000):
        r = np.random.default_rng(10**6 + seed)
        d_in, d_out = int(r.integers(1, 5)), int(r.integers(1, 5))
        prior = Gaussian(r.normal(size=d_in), random_spd(r, d_in))
        lik = LinearGaussian(r.normal(size=d_out), r.normal(size=(d_out, d_in)), random_spd(r, d_out, 0.5))
        obs, x = 2 * r.normal(size=d_out), 2 * r.normal(size=d_in)
        lhs = (gauss.log_density(gauss.marginal_likelihood(prior, lik), obs)
               + gauss.log_density(gauss.posterior_update(prior, lik, obs), x))
        rhs = gauss.log_density(prior, x) + lik.log_density(x, obs)
        cons = max(cons, abs(lhs - rhs))
    elapsed = time.perf_counter() - t0
    ok = quad < 1e-3 and cons < 1e-9 and elapsed < 60
    record(2, "Gaussian algebra matches quadrature", ok,
           f"100 quadrature instances max error {quad:.2e}, 1000 conditioning instances max error {cons:.2e}, "
           f"{elapsed:.1f}s")
    assert ok


# -- 3. EM monotonicity ------------------------------------------------------------

def test_criterion_3_em_monotonicity(tmp_path):
    t0 = time.perf_counter()
    failures, literal_drops, iters = [], 0, 0
    for seed in range(20):
        gen = make_generator(COUPLED_EDGES, seed=seed, **AMBIGUOUS)
        ds = synthesize(gen, 1000, seed=500 + seed)
        _, trace = structure_em(ds, LearnConfig(state_counts=3, seed=seed))
        path = tmp_path / f"trace_{seed}.jsonl"
        trace.write(path)
        back = TrainTrace.read(path)
        params = [r for r in back.records if r["kind"] == "param"]
        iters += len(params)
        if not back.is_monotone(1e-8) or not params:
            failures.append(seed)
        for n in {r["structure_iter"] for r in params}:
            seq = [r["expected_bic"] for r in params if r["structure_iter"] == n]
            literal_drops += sum(b < a - 1e-8 * max(1.0, abs(a)) for a, b in zip(seq, seq[1:]))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 600
    record(3, "EM monotone in every trace", ok,
           f"20 runs, {iters} inner iterations, failing seeds {failures}, "
           f"expected BIC under each iteration's own posteriors dropped {literal_drops} times "
           f"(not an EM guarantee), {elapsed:.1f}s")
    assert ok


# -- 6. denoising ----------------------------------------------------------------

def test_criterion_6_denoising():
    gen = make_generator(COUPLED_EDGES, seed=0, **AMBIGUOUS)
    train = synthesize(gen, 2000, seed=1000)
    test = synthesize(gen, 2000, seed=2000)
    learned, _ = structure_em(train, LearnConfig(state_counts=3, seed=0))
    empty, _ = structure_em(train, LearnConfig(state_counts=3, seed=0, constraints="empty"))

    def err(est):
        return float(normalized_error(est, test.truth, test.interocular()).mean())

    raw = err(test.measurement)
    e_learned = err(infer_batch(learned, test.measurement).estimate_mean)
    e_empty = err(infer_batch(empty, test.measurement).estimate_mean)
    ok = e_learned < raw and e_learned <= e_empty
    record(6, "posterior mean denoises and structure helps", ok,
           f"raw {raw:.5f}, learned {e_learned:.5f}, empty graph {e_empty:.5f}, edges {list(learned.network.edges)}")
    assert ok


# -- 4, 5, 7. structure and parameter recovery ---------------------------------------

@pytest.fixture(scope="module")
def recovery_runs():
    runs = []
    for s in RECOVERY["seeds"]:
        gen = make_generator(COUPLED_EDGES, strength=RECOVERY["strength"], seed=100 + s)
        ds = synthesize(gen, RECOVERY["n"], seed=200 + s)
        model, _ = structure_em(ds, LearnConfig(state_counts=3, seed=s))
        runs.append((gen, ds, model))
    return runs


def test_criterion_4_structure_recovery(recovery_runs):
    target = sorted(COUPLED_EDGES)
    hits = [list(m.network.edges) == target for _, _, m in recovery_runs]
    ok = sum(hits) >= RECOVERY["min_success"]
    record(4, "exact edge-set recovery", ok, f"{sum(hits)}/{len(hits)} seeds, target {target}")
    assert ok


def _matched_mean_error(gen, model):
    worst = 0.0
    for c, gc in gen.components.items():
        gm = np.stack([g.mean for g in gc.shapes])
        lm = np.stack([g.mean for g in model.components[c].shapes])
        rows, cols = linear_sum_assignment(np.linalg.norm(gm[:, None] - lm[None], axis=2))
        worst = max(worst, float(np.abs(gm[rows] - lm[cols]).max()))
    return worst


def test_criterion_5_parameter_recovery(recovery_runs):
    target = sorted(COUPLED_EDGES)
    errs = [_matched_mean_error(g, m) for g, _, m in recovery_runs if list(m.network.edges) == target]
    ok = bool(errs) and max(errs) <= RECOVERY["mean_tol"]
    record(5, "state means recovered", ok,
           f"{len(errs)} successful runs, worst matched coordinate error {max(errs, default=np.nan):.4f}")
    assert ok


def test_criterion_7_inspect_coupling(recovery_runs, tmp_path, capsys):
    _, ds, _ = recovery_runs[0]
    save_dataset(ds, tmp_path / "d.jsonl")
    assert cli.main(["train", "--data", str(tmp_path / "d.jsonl"), "--out-model", str(tmp_path / "m.json"),
                     "--seed", "0", "--states", "3"]) == 0
    assert cli.main(["inspect", "--model", str(tmp_path / "m.json"), "--node", "Z_m", "--given", "E",
                     "--out-dir", str(tmp_path / "ins")]) == 0
    with open(tmp_path / "ins" / "conditional.csv", newline="") as f:
        rows = list(csv.reader(f))[1:]
    table = np.array([[float(v) for v in r[1:]] for r in rows])
    tv = max(_tv(table[:, a], table[:, b]) for a in range(table.shape[1]) for b in range(a))
    ok = tv >= TV_THRESHOLD
    record(7, "inspect shows expression-mouth coupling", ok, f"max column TV {tv:.3f} >= {TV_THRESHOLD}")
    assert ok


# -- 8. determinism and round trips ------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    data = tmp_path / "d.jsonl"
    cli.main(["synth", "--out", str(data), "--n", "400", "--seed", "8"])
    outs = []
    for run in ("a", "b"):
        model, report = tmp_path / f"{run}.json", tmp_path / f"{run}.csv"
        assert cli.main(["train", "--data", str(data), "--out-model", str(model), "--seed", "3",
                         "--states", "3", "--report", str(report)]) == 0
        outs.append((model.read_bytes(), report.read_bytes()))
    same_files = outs[0] == outs[1]

    model = load_model(tmp_path / "a.json")
    save_model(model, tmp_path / "again.json")
    model_rt = models_equal(model, load_model(tmp_path / "again.json")) and dumps_model(model) == outs[0][0].decode()

    ds = load_dataset(data)
    save_dataset(ds, tmp_path / "d2.jsonl")
    data_rt = load_dataset(tmp_path / "d2.jsonl").equals(ds) and (tmp_path / "d2.jsonl").read_bytes() == data.read_bytes()

    ok = same_files and model_rt and data_rt
    record(8, "determinism and round trips", ok,
           f"byte-identical model/report {same_files}, model round trip {model_rt}, dataset round trip {data_rt}")
    assert ok


# -- 9. metric examples ------------------------------------------------------------

def test_criterion_9_metric_examples():
    zero = normalized_error(TEMPLATE_FACE, TEMPLATE_FACE, 1.0)
    unit = TEMPLATE_FACE.copy()
    unit[5] += np.array([2.5, 0.0])
    unit_err = normalized_error(unit, TEMPLATE_FACE, 2.5)
    tri = np.zeros((26, 2))
    tri[20] = [3.0, 4.0]
    tri_err = normalized_error(tri, np.zeros((26, 2)), 5.0)
    checks = [
        np.all(zero == 0.0),
        unit_err[5] == 1.0 and np.count_nonzero(unit_err) == 1,
        tri_err[20] == 1.0 and np.count_nonzero(tri_err) == 1,
        normalized_error(tri, np.zeros((26, 2)), 1.0)[20] == 5.0,
    ]
    ok = all(bool(c) for c in checks)
    record(9, "error metric examples exact", ok, f"checks {[bool(c) for c in checks]}")
    assert ok
