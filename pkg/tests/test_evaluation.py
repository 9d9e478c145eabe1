import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import helpers
import oracles
from lobe_moe import evaluation as ev


def test_auc_examples():
    assert ev.auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert ev.auc([0.4, 0.3, 0.2, 0.8], [0, 1, 0, 1]) == 0.75
    assert ev.auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(ValueError):
        ev.auc([0.1, 0.2], [1, 1])
    assert math.isnan(ev.auc_or_nan([0.1, 0.2], [0, 0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_matches_pairwise(pairs):
    scores = [s / 3 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2:
        return
    assert ev.auc(scores, labels) == oracles.pairwise_auc(scores, labels)


def test_auc_monotone_and_complement():
    rng = np.random.default_rng(0)
    s = rng.normal(size=50)
    y = np.r_[0, 1, rng.integers(0, 2, 48)]
    a = ev.auc(s, y)
    assert ev.auc(np.exp(3 * s) - 1, y) == a
    assert a + ev.auc(-s, y) == pytest.approx(1.0, abs=1e-15)


def test_cv_plan_ten_patients():
    cohort = helpers.fake_cohort(10, np.random.default_rng(1))
    plan = ev.make_cv_plan(cohort, 5, 42)
    assert len(plan.folds) == 5
    for fs in plan.folds:
        assert (len(fs.train), len(fs.val), len(fs.test)) == (8, 1, 1)
    assert ev.audit_plan(plan, cohort) == []
    with pytest.raises(ValueError):
        ev.make_cv_plan(helpers.fake_cohort(9, np.random.default_rng(1)), 5, 42)


def test_cv_plan_deterministic_and_seeded():
    cohort = helpers.fake_cohort(40, np.random.default_rng(2))
    assert ev.make_cv_plan(cohort, 5, 3) == ev.make_cv_plan(cohort, 5, 3)
    assert ev.make_cv_plan(cohort, 5, 3) != ev.make_cv_plan(cohort, 5, 4)


def test_cv_plan_stratified():
    cohort = helpers.fake_cohort(50, np.random.default_rng(3))
    pos = {p for p in cohort.patients if cohort.patient_label(p) == 1}
    counts = [len(pos & (set(fs.val) | set(fs.test))) for fs in ev.make_cv_plan(cohort).folds]
    assert max(counts) - min(counts) <= 1


def test_audit_detects_duplicate_patient():
    cohort = helpers.fake_cohort(20, np.random.default_rng(4))
    plan = ev.make_cv_plan(cohort)
    fs = plan.folds[2]
    victim = fs.test[0]
    bad = ev.CvPlan(plan.folds[:2] + (ev.FoldSplit(2, fs.train + (victim,), fs.val, fs.test),) + plan.folds[3:],
                    plan.seed)
    problems = ev.audit_plan(bad, cohort)
    assert problems == [f"fold 2: patient {victim} in both train and test"]
    report = ev.leakage_audit(bad, cohort)
    assert not report.ok
    with pytest.raises(ev.LeakageError, match=victim):
        report.raise_for_violations()
    assert ev.leakage_audit(plan, cohort).ok


def test_audit_detects_unassigned_and_unknown():
    cohort = helpers.fake_cohort(20, np.random.default_rng(5))
    plan = ev.make_cv_plan(cohort)
    fs = plan.folds[0]
    dropped = ev.FoldSplit(0, fs.train, fs.val, fs.test[1:] + ("ghost",))
    problems = ev.audit_plan(ev.CvPlan((dropped,) + plan.folds[1:], 42), cohort)
    assert any("unknown patient ghost" in p for p in problems)
    assert any(f"patient {fs.test[0]} unassigned" in p for p in problems)
    assert any(f"patient {fs.test[0]} held out 0 times" in p for p in problems)


def test_scan_level_split_inflates_auc():
    # scans of one patient share an identity signature; patient-level folds cannot exploit it
    rng = np.random.default_rng(6)
    n_pat, scans = 60, 3
    labels_p = rng.integers(0, 2, n_pat)
    ident = rng.normal(size=(n_pat, 8))
    X = np.repeat(ident, scans, axis=0) + 0.05 * rng.normal(size=(n_pat * scans, 8))
    y = np.repeat(labels_p, scans)
    pid = np.repeat(np.arange(n_pat), scans)

    def nearest_neighbour(Xtr, ytr, Xte):
        d = ((Xte[:, None, :] - Xtr[None, :, :]) ** 2).sum(axis=2)
        return ytr[d.argmin(axis=1)].astype(float)

    patient_auc, scan_auc = ev.compare_split_protocols(X, y, pid, nearest_neighbour)
    assert scan_auc >= patient_auc
    assert scan_auc > 0.9 and patient_auc < 0.7


def test_t_test_degenerate():
    for d in ([0.0] * 5, [1.0] * 5):
        r = ev.paired_t_test(d)
        assert r.degenerate and r.p_value == 1.0
    with pytest.raises(ValueError):
        ev.paired_t_test([0.1])


def test_t_test_against_quadrature():
    d = [0.05, 0.08, 0.02, 0.06, 0.04]
    r = ev.paired_t_test(d)
    sd = math.sqrt(sum((x - 0.05) ** 2 for x in d) / 4)
    assert r.t == pytest.approx(0.05 / (sd / math.sqrt(5)), rel=1e-12)
    assert r.df == 4
    assert abs(r.p_value - oracles.t_two_sided_p(r.t, 4)) < 1e-6


@pytest.mark.parametrize("t,df", [(0.3, 1), (1.7, 3), (2.776, 4), (4.1, 7), (12.0, 4), (-2.2, 9)])
def test_t_distribution_against_quadrature(t, df):
    assert abs(ev.t_two_sided_p(t, df) - oracles.t_two_sided_p(t, df)) < 1e-9


def test_t_quantile():
    assert ev.t_quantile(0.975, 4) == pytest.approx(2.7764451051977987, abs=1e-9)
    for q, df in ((0.9, 2), (0.995, 10)):
        assert ev.t_cdf(ev.t_quantile(q, df), df) == pytest.approx(q, abs=1e-10)


def test_summarize_examples():
    r = ev.summarize([0.8] * 5)
    assert (r.mean, r.sd) == (pytest.approx(0.8), 0.0)
    assert r.ci_lo == pytest.approx(0.8) and r.ci_hi == pytest.approx(0.8)
    r = ev.summarize([0.7, 0.8, 0.9, 0.75, 0.85], baseline=[0.6] * 5)
    assert r.mean == pytest.approx(0.8, abs=1e-15)
    assert r.sd == pytest.approx(0.0790569, abs=1e-7)
    half = 2.7764451051977987 * r.sd / math.sqrt(5)
    assert r.ci_lo == pytest.approx(0.8 - half) and r.ci_hi == pytest.approx(0.8 + half)
    assert r.p_vs_baseline == ev.paired_t_test(np.array(r.fold_aucs) - 0.6).p_value


def test_summarize_permutation_invariant_and_ci_contains_mean():
    rng = np.random.default_rng(7)
    for _ in range(50):
        v = rng.uniform(0.5, 1.0, 5)
        a, b = ev.summarize(v), ev.summarize(rng.permutation(v))
        assert a.mean == pytest.approx(b.mean, abs=1e-15) and a.sd == pytest.approx(b.sd, abs=1e-15)
        assert a.ci_lo <= a.mean <= a.ci_hi


def test_results_and_summary_round_trip(tmp_path):
    rows = [("baseline", f, 0.6 + f / 100) for f in range(5)] + [("moe:uniform", f, 0.7 + f / 7) for f in range(5)]
    ev.write_results_csv(tmp_path / "r.csv", rows)
    back = ev.read_results_csv(tmp_path / "r.csv")
    assert back["moe:uniform"][3] == 0.7 + 3 / 7
    base = ev.summarize([v for m, _, v in rows if m == "baseline"], "baseline")
    moe = ev.summarize([v for m, _, v in rows if m != "baseline"], "moe:uniform", base.fold_aucs)
    ev.write_summary_csv(tmp_path / "s.csv", [base, moe])
    got = ev.read_summary_csv(tmp_path / "s.csv")
    assert [g.method for g in got] == ["baseline", "moe:uniform"]
    assert got[0].p_vs_baseline is None and got[1].p_vs_baseline == moe.p_vs_baseline
    assert (got[1].mean, got[1].sd, got[1].ci_lo, got[1].ci_hi) == (moe.mean, moe.sd, moe.ci_lo, moe.ci_hi)
