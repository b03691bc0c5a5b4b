"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that pytest prints in the terminal summary
under "acceptance criteria". Tolerances are the stated ones; nothing is
relaxed when a check fails.
"""
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from brpg.bayes import Posterior, posterior_update, sample_theta
from brpg.bench import (ExperimentConfig, Evaluator, MethodSpec, emit_outputs,
                        positive_sided_variance, run_experiment)
from brpg.frozen_lake import FrozenLake, LakeMap, LakeParams, generate_data
from brpg.gradients import (GradConfig, assemble_gradient, grad_c_direct, grad_c_variational,
                            grad_c_zeroth_order, loss_value)
from brpg.losses import LossSpec, eval_loss
from brpg.mdp import compute_occupancy, random_model, value_iteration
from brpg.policies import to_table
from brpg.risk import (RiskMeasure, cvar_weights, rho_value, saa_envelope_solve)
from conftest import report
from oracles import central_diff, semideviation_primal

BETAS = (0.0, 0.5, 0.9)
TABLE_METHODS = tuple(MethodSpec(beta=b) for b in BETAS) + (MethodSpec("empirical"),)


def rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="module")
def table_run():
    """Batch benchmark shared by criteria 1 and 2: 50 replications at N = 5 and 50."""
    cfg = ExperimentConfig(N=(5, 50), methods=TABLE_METHODS, reps=50, plots=False)
    return run_experiment(cfg)


def _losses(results, label, n):
    return np.array([r.loss for r in results.rows if r.method == label and r.N == n])


def test_01_value_iteration_oracle_and_br_pg_gap(table_run):
    ev = Evaluator(table_run.config)
    V, pi = value_iteration(ev.model, ev.P, tol=1e-9)
    bellman = ev.model.expected_cost + ev.model.gamma * ev.P @ V
    vi_ok = np.max(np.abs(V - bellman.min(axis=1))) <= 1e-9 * (1 + np.abs(V).max()) * 10
    oracle = table_run.oracle
    mean = _losses(table_run, "br_pg_b0.9", 50).mean()
    gap = mean / oracle - 1
    passed = bool(vi_ok and gap <= 0.015)
    report(1, "VI oracle + BR-PG(0.9) N=50 within 1.5%", passed,
           f"oracle {oracle:.4f}, BR-PG mean {mean:.4f}, gap {100 * gap:.2f}%")
    assert vi_ok
    assert gap <= 0.015


def test_02_robustness_ordering_at_n5(table_run):
    psv = {b: positive_sided_variance(_losses(table_run, f"br_pg_b{b:g}", 5)) for b in BETAS}
    mean = {b: _losses(table_run, f"br_pg_b{b:g}", 5).mean() for b in BETAS}
    emp = _losses(table_run, "empirical", 5)
    psv_emp = positive_sided_variance(emp)
    psv_ok = psv[0.0] > psv[0.5] > psv[0.9]
    emp_ok = psv_emp > max(psv.values())
    mean_ok = mean[0.0] > mean[0.5] > mean[0.9]
    detail = ("psv " + ", ".join(f"b{b:g} {psv[b]:.3f}" for b in BETAS)
              + f"; empirical psv {psv_emp:.3f}; mean " + ", ".join(
                  f"b{b:g} {mean[b]:.3f}" for b in BETAS) + f", empirical {emp.mean():.3f}"
              + ("" if mean_ok else " (mean not strictly decreasing)"))
    report(2, "psv ordering at N=5", psv_ok and emp_ok, detail)
    assert psv_ok
    assert emp_ok


def test_03_estimator_error_law():
    fam = random_model(3, n_states=3, n_actions=2, gamma=0.9)
    post = _posterior(fam.param_names)
    alpha = np.random.default_rng(0).normal(size=(3, 2))
    spec, measure = LossSpec("linear"), RiskMeasure.cvar(0.5)
    ref = assemble_gradient(fam, post, alpha, spec, measure, GradConfig(K=200, r=100_000),
                            12345).g_hat
    rs = np.array([10, 40, 160, 640])
    mse = []
    for r in rs:
        errs = [np.sum((assemble_gradient(fam, post, alpha, spec, measure,
                                          GradConfig(K=200, r=int(r)), seed).g_hat - ref) ** 2)
                for seed in range(400)]
        mse.append(np.mean(errs))
    slope = float(np.polyfit(np.log(rs), np.log(mse), 1)[0])
    passed = abs(slope + 1) <= 0.2
    report(3, "MSE(g) slope vs r", passed,
           f"slope {slope:.3f}; MSE " + ", ".join(f"r={r}: {m:.2e}" for r, m in zip(rs, mse)))
    assert passed


def _posterior(names):
    return posterior_update(Posterior.uniform(names), _counts(names))


def _counts(names):
    from brpg.bayes import TransitionDataset

    return TransitionDataset(((names[0], 2, 5), (names[1], 4, 5)))


def test_04_gradient_routes_agree():
    K = 300
    worst = {"direct-var": 0.0, "direct-zo": 0.0, "var-zo": 0.0, "fd": 0.0}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        fam = random_model(seed, n_states=3, n_actions=2, gamma=0.9)
        model, P = fam.instantiate(rng.random(2))
        target = rng.dirichlet(np.ones(3))
        spec = LossSpec("kl", target_state_dist=target, gamma=0.9)
        alpha = rng.normal(size=(3, 2))
        d = grad_c_direct(model, P, alpha, spec, K)
        v = grad_c_variational(model, P, alpha, spec, K)
        z = grad_c_zeroth_order(model, P, alpha, spec, K, nu=1e-3, m=10_000, rng=seed)
        fd = central_diff(lambda a: float(loss_value(model, P, a, spec, K)), alpha, 1e-5)
        for key, err in (("direct-var", rel(v, d)), ("direct-zo", rel(z, d)),
                         ("var-zo", rel(z, v)), ("fd", rel(d, fd))):
            worst[key] = max(worst[key], err)
    passed = max(worst["direct-var"], worst["direct-zo"], worst["var-zo"]) <= 0.05 \
        and worst["fd"] <= 1e-4
    report(4, "direct / variational / zeroth-order / finite differences", passed,
           ", ".join(f"max {k} {v:.2e}" for k, v in worst.items()))
    assert passed


def test_05_saa_matches_closed_forms():
    rng = np.random.default_rng(5)
    worst = 0.0
    for k in range(100):
        r = int(rng.integers(2, 65))
        x = rng.normal(size=r) * rng.uniform(0.1, 10)
        if k % 2 == 0:
            beta = float(rng.uniform(0.05, 0.95))
            ref = cvar_weights(x, beta).rho_value
            got = saa_envelope_solve(x, RiskMeasure.cvar(beta)).rho_value
        else:
            c = float(rng.uniform(0.05, 1.0))
            ref = semideviation_primal(x, c)
            got = saa_envelope_solve(x, RiskMeasure.semideviation(c)).rho_value
        worst = max(worst, abs(got - ref))
    passed = worst <= 1e-3
    report(5, "SAA envelope vs closed forms", passed, f"max abs difference {worst:.2e}")
    assert passed


MEASURES = [RiskMeasure(), RiskMeasure.cvar(0.5), RiskMeasure.cvar(0.9),
            RiskMeasure.semideviation(0.5), RiskMeasure.semideviation(1.0)]
_axiom_cases = []


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(data=st.data())
def _check_axioms(data):
    measure = data.draw(st.sampled_from(MEASURES))
    r = data.draw(st.integers(1, 30))
    vec = arrays(float, r, elements=st.floats(-50, 50))
    x, y = data.draw(vec), data.draw(vec)
    t = data.draw(st.floats(-20, 20))
    k = data.draw(st.floats(0.01, 20))
    rho = lambda v: rho_value(measure, v)  # noqa: E731
    _axiom_cases.append(measure.kind)
    assert abs(rho(x + t) - rho(x) - t) <= 1e-6
    assert abs(rho(k * x) - k * rho(x)) <= 1e-6
    assert rho(np.maximum(x, y)) >= rho(x) - 1e-6
    assert rho(x + y) <= rho(x) + rho(y) + 1e-6


def test_06_coherence_axioms():
    _axiom_cases.clear()
    try:
        _check_axioms()
        passed, detail = True, ""
    except AssertionError as exc:
        passed, detail = False, f" ({exc})"
    kinds = sorted(set(_axiom_cases))
    report(6, "coherence axioms", passed and len(_axiom_cases) >= 1000,
           f"{len(_axiom_cases)} cases over {kinds}{detail}")
    assert passed
    assert len(_axiom_cases) >= 1000
    assert kinds == ["cvar", "expectation", "mean_semideviation"]


def test_07_consistency_trend():
    env = FrozenLake()
    true = LakeParams(0.3, 0.02)
    model, P = env.instantiate(true.as_array())
    probes = np.random.default_rng(7).normal(size=(10, env.n_states, 4))
    pis = to_table(probes)
    truth = eval_loss(LossSpec("linear"), compute_occupancy(model, P, pis, 130),
                      model.expected_cost)
    measure = RiskMeasure.cvar(0.5)
    medians = []
    for n in (5, 50, 500):
        gaps = []
        for rep in range(20):
            data = generate_data(env.lake, true, n, np.random.SeedSequence([7, rep, n]))
            post = posterior_update(Posterior.uniform(env.param_names), data)
            thetas = sample_theta(post, 2000, np.random.SeedSequence([8, rep, n]))
            m, Ps = env.instantiate(thetas)
            lam = compute_occupancy(m, Ps[:, None], pis[None], 130)
            vals = (lam * m.expected_cost[:, None]).sum(axis=(-2, -1))
            G = np.array([rho_value(measure, vals[:, j]) for j in range(len(probes))])
            gaps.append(np.max(np.abs(G - truth)))
        medians.append(float(np.median(gaps)))
    passed = medians[0] > medians[1] > medians[2]
    report(7, "sup-gap decreasing in N", passed,
           ", ".join(f"N={n}: {g:.4f}" for n, g in zip((5, 50, 500), medians)))
    assert passed


def test_08_episodic_schedules():
    details, passed = [], True
    for beta in BETAS:
        finals = {}
        for episodes in (20, 5):
            cfg = ExperimentConfig(mode="episodic", N=(0,), episodes=episodes,
                                   iters=100 // episodes, reps=50, plots=False,
                                   methods=(MethodSpec(beta=beta),))
            res = run_experiment(cfg)
            finals[episodes] = float(np.median([r.loss for r in res.rows]))
        ok = finals[20] <= finals[5]
        passed &= ok
        details.append(f"b{beta:g}: 20x5 {finals[20]:.3f} vs 5x20 {finals[5]:.3f}")
    report(8, "episodic 20x5 <= 5x20 (median final loss)", passed, "; ".join(details))
    assert passed


def test_09_imitation():
    cfg = ExperimentConfig(mode="imitate", loss="kl", N=(5, 50), reps=50, plots=False,
                           methods=(MethodSpec(beta=0.5),))
    res = run_experiment(cfg)
    med = {n: float(np.median([r.loss for r in res.rows if r.N == n])) for n in (5, 50)}
    ratio = med[50] / res.initial_loss
    passed = ratio <= 0.2 and med[50] < med[5]
    report(9, "KL imitation", passed,
           f"initial {res.initial_loss:.4f}, median final N=50 {med[50]:.4f} "
           f"({100 * ratio:.1f}%), N=5 {med[5]:.4f}")
    assert ratio <= 0.2
    assert med[50] < med[5]


def test_10_determinism(tmp_path):
    cfg = ExperimentConfig(N=(5, 50), methods=TABLE_METHODS, reps=4, iters=20, plots=False)
    outs = []
    for k, workers in enumerate((1, 1, 3)):
        d = tmp_path / f"run{k}"
        emit_outputs(run_experiment(cfg, workers=workers), d, plots=False)
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    passed = outs[0] == outs[1] == outs[2] and len(outs[0]) > 1
    report(10, "byte-identical CSVs across reruns and worker counts", passed,
           f"{len(outs[0])} files compared over 3 runs (workers 1, 1, 3)")
    assert passed
