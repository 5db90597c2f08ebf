"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary lines
are written straight to the terminal, bypassing output capture.
"""
import io
import math
from contextlib import redirect_stdout

import numpy as np
import pytest

from treemux.cli import main, table1_rows
from treemux.engine import (
    DetectionStrategy,
    SourceConfig,
    detect_marginal,
    output_distribution,
    single_photon_probability,
)
from treemux.optimizer import Axis, optimize_n
from treemux.oracle import run_trials, z_scores
from treemux.topology import Kind, LossModel, TopologySpec, arms_cbtm, arms_iibtm, arms_oibtm

SPD = DetectionStrategy.spd()

IIBTM_11 = "V_r^4, V_r^3V_t, V_r^3V_t, V_r^2 V_t^2, V_r^3 V_t, V_r^2 V_t^2, V_r V_t^2, V_r^2 V_t, V_r V_t^2, V_r V_t^2, V_t^3"
OIBTM_11 = "V_r^4,V_r^3V_t,V_r^3V_t,V_r^2V_t^2,V_r^3V_t,V_r^2V_t^2,V_r^2V_t^2,V_r V_t^3, V_r^2V_t,V_r V_t^2,V_t^2"

# (V_r, V_D) -> (P, N, lambda) for V_t = 0.9, 0.95, 0.985 at V_b = 0.98
REFERENCE_TABLE = {
    (0.92, 0.8): [(0.685, 10, 0.686), (0.743, 20, 0.446), (0.809, 40, 0.315)],
    (0.92, 0.9): [(0.716, 10, 0.78), (0.772, 11, 0.696), (0.835, 20, 0.517)],
    (0.92, 0.95): [(0.733, 10, 0.869), (0.793, 10, 0.836), (0.855, 20, 0.658)],
    (0.92, 0.98): [(0.744, 10, 0.943), (0.808, 10, 0.925), (0.87, 20, 0.824)],
    (0.97, 0.8): [(0.757, 17, 0.472), (0.801, 36, 0.262), (0.862, 40, 0.205)],
    (0.97, 0.9): [(0.787, 17, 0.576), (0.828, 18, 0.466), (0.88, 38, 0.279)],
    (0.97, 0.95): [(0.805, 17, 0.711), (0.845, 18, 0.586), (0.896, 20, 0.464)],
    (0.97, 0.98): [(0.818, 9, 0.927), (0.858, 10, 0.87), (0.908, 19, 0.682)],
    (0.99, 0.8): [(0.807, 34, 0.324), (0.852, 40, 0.214), (0.899, 74, 0.114)],
    (0.99, 0.9): [(0.834, 18, 0.513), (0.872, 33, 0.314), (0.911, 37, 0.213)],
    (0.99, 0.95): [(0.854, 17, 0.66), (0.888, 17, 0.534), (0.921, 36, 0.269)],
    (0.99, 0.98): [(0.869, 17, 0.82), (0.901, 17, 0.692), (0.931, 18, 0.561)],
}
REFERENCE_VT = (0.9, 0.95, 0.985)

MC_SEED = 20250808


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}" + (f": {detail}" if detail else ""))
        assert ok, detail

    return emit


def cli_text(*argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(list(argv))
    assert code == 0
    return buf.getvalue()


def tokens(text):
    return [t.replace(" ", "") for t in text.split(",")]


def test_criterion_1_arm_formulas(report):
    got_in = cli_text("arms", "--kind", "iibtm", "--n", "11", "--list").strip().strip("[]")
    got_out = cli_text("arms", "--kind", "oibtm", "--n", "11", "--list").strip().strip("[]")
    sym_out = [line.split(",")[3] for line in cli_text("arms", "--kind", "oibtm", "--n", "11", "--symbolic").split()[1:]]
    ok = tokens(got_in) == tokens(IIBTM_11) and tokens(got_out) == tokens(OIBTM_11) and sym_out == tokens(OIBTM_11)
    report(1, "11-unit input- and output-extended arm lists token-for-token", ok, f"in=[{got_in}] out=[{got_out}]")


def test_criterion_2_cbtm_reduction(report):
    losses = [LossModel(0.92, 0.9, 0.9, 0.98), LossModel(0.99, 0.985, 0.98, 0.98), LossModel(0.3, 0.7, 0.5, 0.5)]
    bad = [
        (m, loss)
        for m in range(1, 7)
        for loss in losses
        if arms_iibtm(2**m, loss) != arms_cbtm(m, loss) or arms_oibtm(2**m, loss) != arms_cbtm(m, loss)
    ]
    report(2, "incomplete trees with 2^m units equal the complete tree, m = 1..6", not bad, f"mismatches={bad}")


def test_criterion_3_reference_table(report):
    rows = table1_rows()
    misses = []
    worst = [0.0, 0.0]
    for vr, vd, vt, p1, n, lam in rows:
        p_ref, n_ref, lam_ref = REFERENCE_TABLE[(vr, vd)][REFERENCE_VT.index(vt)]
        worst = [max(worst[0], abs(p1 - p_ref)), max(worst[1], abs(lam - lam_ref))]
        if abs(p1 - p_ref) > 0.001 or n != n_ref or abs(lam - lam_ref) > 0.01:
            misses.append(((vr, vt, vd), (round(p1, 4), n, round(lam, 4)), (p_ref, n_ref, lam_ref)))
    ok = len(rows) == 36 and not misses
    report(3, "all 36 reference-table cells", ok,
           f"max |dP|={worst[0]:.2e}, max |dlambda|={worst[1]:.2e}, mismatches={misses}")


def test_criterion_4_difference_surfaces(report):
    step = 0.005
    vts = Axis("v_t", 0.9, 0.985, step).values()
    vrs = Axis("v_r", 0.9, 0.99, step).values()
    shape = (len(vts), len(vrs))
    p = {kind: np.empty(shape) for kind in Kind}
    for a, vt in enumerate(vts):
        for b, vr in enumerate(vrs):
            loss = LossModel(vr, vt, 0.9, 0.98)
            for kind in Kind:
                p[kind][a, b] = optimize_n(kind, loss, SPD).p1_max
    diffs = {
        "out-sym": (p[Kind.OIBTM] - p[Kind.CBTM], 0.026, [(0.9, 0.9)]),
        "in-sym": (p[Kind.IIBTM] - p[Kind.CBTM], 0.019, [(0.949, 0.949)]),
        "out-in": (p[Kind.OIBTM] - p[Kind.IIBTM], 0.016, [(0.9, 0.92)]),
    }
    checks, notes = [], []
    for name, (d, ref_max, ref_at) in diffs.items():
        a, b = np.unravel_index(np.argmax(d), shape)
        where = (vts[a], vrs[b])
        near = any(abs(where[0] - t) <= step + 1e-12 and abs(where[1] - r) <= step + 1e-12 for t, r in ref_at)
        value_ok = abs(d[a, b] - ref_max) <= 0.002
        lo_a, lo_b = np.unravel_index(np.argmin(d), shape)
        nonneg = bool(d.min() >= 0.0)
        checks += [value_ok, near, nonneg]
        notes.append(
            f"{name} max={d[a, b]:.4f} at (V_t, V_r)={where} [{'ok' if value_ok and near else 'off'}], "
            f"min={d.min():.2e} at {(vts[lo_a], vrs[lo_b])} [{'ok' if nonneg else 'negative'}]"
        )
    report(4, "difference-surface maxima and non-negativity, step 0.005", all(checks), "; ".join(notes))


def test_criterion_5_per_n_curve_structure(report):
    loss = LossModel(0.92, 0.9, 0.9, 0.98)
    out = optimize_n(Kind.OIBTM, loss, SPD).curve()
    sym = optimize_n(Kind.CBTM, loss, SPD, n_max=64).curve()
    peaks = [n for n in range(2, max(out)) if out[n] > out[n - 1] and out[n] >= out[n + 1]]
    odd_peaks = [n for n in peaks if n & (n - 1)]
    best_sym = max(sym[n] for n in (2, 4, 8, 16, 32, 64))
    ok = bool(odd_peaks) and max(out.values()) > best_sym
    report(5, "per-N curve has non-power-of-two local maxima and beats the complete tree", ok,
           f"local maxima at N={peaks}, max out={max(out.values()):.4f} vs complete={best_sym:.4f}")


def test_criterion_6_spd_dominates(report):
    s12 = DetectionStrategy((1, 2))
    grid = [round(0.9 + 0.01 * k, 10) for k in range(10)]
    vts = grid[:9] + [0.985]
    vds = grid[:9]
    worst = (math.inf, None)
    for vd in vds:
        for vr in grid:
            for vt in vts:
                loss = LossModel(vr, vt, vd, 0.9)
                for kind in Kind:
                    d = optimize_n(kind, loss, SPD).p1_max - optimize_n(kind, loss, s12).p1_max
                    if d < worst[0]:
                        worst = (d, (kind.value, vr, vt, vd))
    report(6, "single-photon heralding beats S={1,2} for V_r, V_t, V_D >= 0.9, V_b = 0.9", worst[0] >= 0.0,
           f"min P_SPD - P_12 = {worst[0]:.4f} at {worst[1]}")


def random_config(rng, n_hi=128, lam_hi=3.0):
    kind = Kind(rng.choice([k.value for k in Kind]))
    n = int(rng.integers(1, n_hi + 1))
    if kind is Kind.CBTM:
        n = 1 << (n.bit_length() - 1)
    loss = LossModel(*rng.uniform(0.0, 1.0, 4))
    accepted = tuple(sorted(set(int(j) for j in rng.integers(1, 5, size=rng.integers(1, 4)))))
    return SourceConfig(TopologySpec(kind, n), loss, DetectionStrategy(accepted), float(rng.uniform(0.0, lam_hi)))


def test_criterion_7_normalization(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    bad = 0
    for _ in range(200):
        config = random_config(rng)
        dist = output_distribution(config, 200)
        err = abs(math.fsum(dist.probabilities) - 1.0)
        worst = max(worst, err)
        bad += err > 1e-10 + dist.truncation_tail
    report(7, "P_i sums to one over 200 random configurations", bad == 0, f"max |sum - 1| = {worst:.2e}")


def test_criterion_8_monte_carlo(report):
    rng = np.random.default_rng(MC_SEED)
    configs = [
        SourceConfig(TopologySpec(Kind.OIBTM, 10), LossModel(0.92, 0.9, 0.8, 0.98), SPD, 0.686),
        SourceConfig(TopologySpec(Kind.OIBTM, 18), LossModel(0.99, 0.985, 0.98, 0.98), SPD, 0.561),
    ]
    while len(configs) < 20:
        configs.append(random_config(rng, n_hi=32, lam_hi=2.0))
    worst = (0.0, None)
    failures = []
    for k, config in enumerate(configs):
        est = run_trials(config, 10**6, seed=MC_SEED + k)
        for i, z in z_scores(est, output_distribution(config, 2)).items():
            if abs(z) > worst[0]:
                worst = (abs(z), (k, i))
            if abs(z) > 3:
                failures.append((k, i, round(z, 2)))
    report(8, "Monte Carlo agrees with the analytic P_0, P_1, P_2 within 3 sigma (20 configs, 1e6 trials)",
           not failures, f"max |z| = {worst[0]:.2f} at (config, i)={worst[1]}, failures={failures}")


def test_criterion_9_closed_forms(report):
    rng = np.random.default_rng(9)
    worst_p = worst_t = 0.0
    for _ in range(200):
        lam = float(rng.uniform(0.0, 3.0))
        kind = Kind(rng.choice([k.value for k in Kind]))
        n = int(rng.integers(1, 129))
        if kind is Kind.CBTM:
            n = 1 << (n.bit_length() - 1)
        got = single_photon_probability(SourceConfig(TopologySpec(kind, n), LossModel.perfect(), SPD, lam))
        want = -math.expm1(n * math.log1p(-lam * math.exp(-lam)))
        if want > 0:
            worst_p = max(worst_p, abs(got - want) / want)
        j = int(rng.integers(0, 6))
        v_d = float(rng.uniform(0.01, 1.0))
        mu = lam * v_d
        thin = math.exp(-mu) * mu**j / math.factorial(j)
        marginal = detect_marginal(j, lam, v_d)
        if thin > 0:
            worst_t = max(worst_t, abs(marginal - thin) / thin)
    ok = worst_p <= 1e-12 and worst_t <= 1e-12
    report(9, "perfect-system P_1 and Poisson thinning to 1e-12 relative", ok,
           f"max rel err P_1={worst_p:.1e}, thinning={worst_t:.1e}")
