"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the summary lines appear at the
end of the session) or ``python tests/test_acceptance.py``.
"""

import contextlib
import time

import numpy as np
import pytest

from multipgd import benchmark
from multipgd.attack import (TOY, AttackConfig, EnsembleOr, RandomSign, ThreatModel,
                             attack_batch, project, toy_outcomes)
from multipgd.evaluation import distance_trace, evaluate, named_config, standard_configs
from multipgd.losses import (ce_loss, cw_loss, dlr_loss, loss_value_and_logit_gradient)
from multipgd.models import forward, input_gradient, loss_at
from multipgd.schedules import make_paper_schedule, step_size
from conftest import random_mlp
from oracles import (MP_LOSSES, central_diff, l2_disk_nearest_grid, md2_step, md3_step,
                     min_relu_margin, plain_layers, rel_err)

RESULTS: list[str] = []


@contextlib.contextmanager
def criterion(n, text):
    """Record ``[n] PASS/FAIL text`` whatever the outcome, then re-raise."""
    try:
        yield
    except BaseException as exc:
        line = f"criterion {n:2d}: FAIL  {text}  ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        RESULTS.append(line)
        print(line)
        raise
    line = f"criterion {n:2d}: PASS  {text}"
    RESULTS.append(line)
    print(line)


def test_01_toy_reproduction():
    with criterion(1, "toy: CE succeeds, CW jams and fails, CE&CW succeeds, iterates feasible, <1 s"):
        t0 = time.perf_counter()
        out = toy_outcomes()
        elapsed = time.perf_counter() - t0
        x = np.array(TOY.x)
        pts = np.concatenate([o.iterates[0, 1:] for o in out.values()])
        assert pts.shape == (150, 2)
        assert np.all(np.linalg.norm(pts - x, axis=1) <= 0.4 + 1e-9), "iterate outside disk"
        cw = out["CW"].iterates[0, 1:]
        d = np.linalg.norm(np.diff(cw, axis=0), axis=1)
        moving = np.flatnonzero(d >= 1e-9)
        assert moving.size == 0 or moving[-1] < len(d) - 1, "CW iterates never settle"
        assert not out["CW"].success, "PGD-CW succeeded"
        assert elapsed < 1.0, f"took {elapsed:.2f} s"
        ce_ok, alt_ok = out["CE"].success, out["CE&CW"].success
        assert ce_ok, "PGD-CE did not reach a misclassified point"
        assert alt_ok, "PGD-CE&CW did not reach a misclassified point"


def test_02_loss_and_gradient_suite():
    with criterion(2, "loss values vs 400-digit oracle, logit and input gradients vs finite differences, <10 s"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        for kind in ("ce", "cw", "dlr"):
            for _ in range(1000):
                C = int(rng.integers(3, 11))
                z = rng.normal(0, 10 ** rng.uniform(-2, 2), size=C)
                y = int(rng.integers(C))
                got = loss_value_and_logit_gradient(kind, z, y)[0]
                ref = float(MP_LOSSES[kind](z, y))
                assert abs(got - ref) <= 1e-10 * abs(ref), (kind, z, y, got, ref)
        for kind in ("ce", "cw", "dlr"):
            done = 0
            while done < 100:
                C = int(rng.integers(3, 8))
                z = rng.normal(0, 2, size=C)
                y = int(rng.integers(C))
                s = np.sort(z)
                if np.min(np.diff(s)) < 1e-3:
                    continue
                _, g = loss_value_and_logit_gradient(kind, z, y)
                fd = central_diff(lambda v: float(MP_LOSSES[kind](v, y)), z, 1e-6)
                assert rel_err(g, fd) <= 1e-6, (kind, z, y)
                done += 1
        for kind in ("ce", "cw", "dlr"):
            done = 0
            while done < 100:
                hidden = [(), (16,), (12, 10)][done % 3]
                m = random_mlp(rng, 3, hidden, 4)
                x = rng.uniform(0, 1, size=3)
                y = int(rng.integers(4))
                s = np.sort(forward(m, x))
                # stay clear of argmax ties and ReLU kinks, where no derivative exists
                if np.min(np.diff(s)) < 1e-3 or min_relu_margin(plain_layers(m), x) < 1e-3:
                    continue
                g = input_gradient(m, x, y, kind)
                fd = central_diff(lambda v: loss_at(m, v, y, kind), x, 1e-5)
                assert rel_err(g, fd) <= 1e-4, (kind, hidden)
                done += 1
        elapsed = time.perf_counter() - t0
        assert elapsed < 10.0, f"took {elapsed:.2f} s"


def test_03_algebraic_properties():
    with criterion(3, "CE >= CW, CE >= 0, CW sign, DLR scale invariance, shift invariance"):
        rng = np.random.default_rng(3)
        for _ in range(2000):
            C = int(rng.integers(3, 10))
            z = rng.normal(0, 10 ** rng.uniform(-1, 1.5), size=C)
            y = int(rng.integers(C))
            ce, cw = ce_loss(z, y), cw_loss(z, y)
            assert ce >= cw and ce >= 0
            top = np.sort(z)[::-1]
            if top[0] != top[1]:
                assert (cw > 0) == (int(np.argmax(z)) != y)
            if top[0] - top[2] > 1e-6:
                base = dlr_loss(z, y)
                for c in (1e-3, 0.1, 10.0, 1e3):
                    assert abs(dlr_loss(c * z, y) - base) <= 1e-9
            alpha = float(rng.uniform(-50, 50))
            w = z + alpha
            assert abs(ce_loss(w, y) - ce) <= 1e-9
            assert abs(cw_loss(w, y) - cw) <= 1e-9
            if top[0] - top[2] > 1e-3:
                assert abs(dlr_loss(w, y) - dlr_loss(z, y)) <= 1e-9


def test_04_projection_suite():
    with criterion(4, "projection idempotent (bitwise), feasible, l2 matches grid oracle within 1e-3"):
        rng = np.random.default_rng(4)
        for p in ("inf", "2"):
            for box in (True, False):
                th = ThreatModel(p, float(rng.uniform(0.01, 0.5)), box=box)
                O = rng.uniform(0, 1, size=(500, 6))
                P = project(O + rng.normal(0, 0.7, size=O.shape), O, th)
                assert np.array_equal(project(P, O, th), P)
                assert th.contains(P, O).all()
        for _ in range(50):
            eps = float(rng.uniform(0.1, 0.8))
            o = rng.uniform(-1, 1, size=2)
            c = o + rng.normal(0, 1, size=2)
            got = project(c, o, ThreatModel("2", eps, box=False))
            assert np.linalg.norm(got - l2_disk_nearest_grid(c, o, eps, 1e-3)) <= 1e-3


def test_05_schedule_suite():
    with criterion(5, "fixed-quarter, GAMA drops, MD2/MD3 vs scalar formula to 1e-12, 2eps at stage starts"):
        eps, T = 8 / 255, 100
        fq = make_paper_schedule("fixed-quarter", eps, T)
        assert all(step_size(fq, t, T) == eps / 4 for t in range(T))
        g = make_paper_schedule("gama", eps, T)
        for t in range(T):
            want = 2 * eps if t < 60 else (0.2 * eps if t < 85 else 0.02 * eps)
            assert step_size(g, t, T) == pytest.approx(want, rel=1e-15)
        md2, md3 = make_paper_schedule("md2", eps, T), make_paper_schedule("md3", eps, T)
        for t in range(T):
            assert abs(step_size(md2, t, T) - md2_step(t, eps)) <= 1e-12
            assert abs(step_size(md3, t, T) - md3_step(t, eps)) <= 1e-12
        for s in (md2, md3):
            for a in (0, *s.stage_boundaries):
                assert step_size(s, a, T) == 2 * eps


def test_06_structural_invariants(bench, tmp_path):
    with criterion(6, "first-stage subsumption, best-iterate dominance, byte-identical reruns"):
        ds = bench.test.subset(slice(0, 300))
        th = bench.threat
        single = attack_batch(bench.robust, ds.X, ds.y, named_config("ce", th), record_iterates=True)
        alt = attack_batch(bench.robust, ds.X, ds.y, named_config("ce,cw,dlr", th),
                           record_iterates=True)
        for s, a in zip(single, alt):
            assert np.array_equal(s.iterates[:, :35], a.iterates[:, :35])
        cfg = named_config("ce,cw", th, R=3, init=RandomSign(0))
        for o, y in zip(attack_batch(bench.robust, ds.X, ds.y, cfg, record_iterates=True), ds.y):
            Z = forward(bench.robust, o.iterates.reshape(-1, 2))
            mis = np.argmax(Z, axis=1) != y
            if mis.any():
                r, t = o.best_iterate_index
                best = cw_loss(Z[r * (cfg.T + 1) + t], y)
                # margins of near-identical iterates can differ by rounding only
                assert all(best >= cw_loss(z, y) - 1e-12 for z in Z[mis])
        configs = standard_configs(th) | {"rand": cfg}
        for tag in ("a", "b"):
            rep = evaluate(bench.robust, ds, configs)
            rep.write_csv(tmp_path / f"{tag}.csv")
            rep.write_examples_csv(tmp_path / f"{tag}_ex.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a_ex.csv").read_bytes() == (tmp_path / "b_ex.csv").read_bytes()


def test_07_ensemble_or_exactness(bench):
    with criterion(7, "ensemble-OR success set equals union of its constituents (exact)"):
        th = bench.threat
        ens = named_config("ce,cw", th, combiner=EnsembleOr())
        halves = {k: AttackConfig(50, th, k, ens.steps) for k in ("ce", "cw")}
        rep = evaluate(bench.robust, bench.test, {"ens": ens, **halves})
        union = rep.success_set("ce") | rep.success_set("cw")
        assert rep.success_set("ens") == union
        assert rep["ens"].asr >= max(rep["ce"].asr, rep["cw"].asr)


def test_08_alternation_not_weaker(bench):
    with criterion(8, "robust_acc(CE&CW) <= min(CE, CW) + 1 pp on the adversarially trained MLP, <2 min"):
        t0 = time.perf_counter()
        b = benchmark.load()
        assert len(b.test) >= 1000
        rep = evaluate(b.robust, b.test, standard_configs(b.threat, losses=("ce", "cw", "ce,cw")))
        elapsed = time.perf_counter() - t0
        ce, cw, both = (rep[k].robust_accuracy for k in ("CE", "CW", "CE&CW"))
        print(f"  robust accuracy: CE {100 * ce:.2f}%  CW {100 * cw:.2f}%  CE&CW {100 * both:.2f}%")
        assert 0.30 <= ce <= 0.70 and 0.30 <= cw <= 0.70, "single-loss accuracy outside 30-70%"
        assert both <= min(ce, cw) + 0.01
        assert elapsed < 120, f"took {elapsed:.1f} s"


def test_09_trace_signature(bench):
    with criterion(9, "CE&CW&DLR trace rises at each switch; single-loss tails non-increasing (5% jitter)"):
        batch = bench.test.subset(slice(0, 100))
        th = bench.threat
        alt = distance_trace(bench.robust, batch, named_config("ce,cw,dlr", th))
        for switch in (34, 67):
            assert alt.at(switch) > alt.at(switch - 1), (switch, alt.at(switch - 1), alt.at(switch))
        for loss in ("ce", "cw", "dlr"):
            tr = distance_trace(bench.robust, batch, named_config(loss, th))
            tail = tr.mean_l2[-20:]
            assert np.all(tail[1:] <= tail[:-1] * 1.05), loss


def test_10_adversarial_training_helps(bench):
    with criterion(10, "adversarial training gives higher PGD-CE robust accuracy than plain training"):
        cfg = {"CE": named_config("ce", bench.threat)}
        adv = evaluate(bench.robust, bench.test, cfg)["CE"].robust_accuracy
        plain = evaluate(bench.plain, bench.test, cfg)["CE"].robust_accuracy
        print(f"  PGD-CE robust accuracy: adversarial {100 * adv:.2f}%  plain {100 * plain:.2f}%")
        assert adv > plain


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
