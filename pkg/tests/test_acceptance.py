"""Acceptance suite. Each test records one PASS/FAIL line, printed in the
"acceptance criteria" section of the pytest terminal summary."""

import json
import math
import statistics
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from vertexfuzz.attacks import (
    FOUND,
    AttackConfig,
    ds_binary,
    ds_hierarchy,
    ds_multiclass,
    ds_multiclass_alt,
    ds_refinement,
    make_oracle,
)
from vertexfuzz.backends import FeedForwardModel, Layer, LinearModel
from vertexfuzz.cli import main
from vertexfuzz.core import linf_distance, predict_label
from vertexfuzz.harness import METHODS, aggregate, run_campaign
from vertexfuzz.metrics import avg_distortion_l2, avg_distortion_linf, query_stats, success_rate
from vertexfuzz.remote import OracleServer, RemoteOracleConfig
from vertexfuzz.verify import check_exactness, check_projection

FIXTURE_CFG = AttackConfig(d=8, budget=2000)


def record(number: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}")
    assert ok, detail


def campaign_rows(suite, cfg, method):
    rows = []
    for fx in suite:
        rows += run_campaign(fx.dataset, fx.model, cfg, method=method).rows
    return rows


def test_01_vertex_extremum_exactness():
    t0 = time.perf_counter()
    res = check_exactness(500, seed=0)
    elapsed = time.perf_counter() - t0
    ok = res.trials >= 500 and res.passed and elapsed < 10
    record(1, "linear extremum at a vertex", ok, f"{res.exact}/{res.trials} exact in {elapsed:.2f}s")


def test_02_nested_projection():
    t0 = time.perf_counter()
    res = check_projection(200, seed=0)
    elapsed = time.perf_counter() - t0
    ok = res.trials >= 200 and res.passed and elapsed < 10
    record(2, "projection onto a nested box", ok, f"{res.exact}/{res.trials} exact in {elapsed:.2f}s")


def _bound(n: int, k: int) -> int:
    return 2 * n + n * (k - 1)


def _query_bound_models():
    """Random linear and small ReLU models, n in 1..10, one to four outputs."""
    for seed in range(600):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 11))
        x = rng.integers(20, 236, n).astype(float)
        classes = int(rng.integers(1, 5))
        if seed % 2:
            w1 = rng.normal(size=(6, n)) / 8
            model = FeedForwardModel((
                Layer(w1, -w1 @ x + rng.normal(size=6) * 4, "relu"),
                Layer(rng.normal(size=(classes, 6)), rng.normal(size=classes), "identity"),
            ), post="logits")
        else:
            w = rng.integers(-64, 65, (classes, n)) / 64
            model = LinearModel(w, -w @ x + rng.integers(-200, 201, classes))
        cfg = AttackConfig(d=float(rng.integers(1, 9)), budget=5000, refine=False,
                           early_stop=bool(seed % 3), seed=seed)
        yield x, model, cfg


def test_03_query_bounds(suite):
    runs = passes = late = violations = 0
    worst = 0.0
    for x, model, cfg in _query_bound_models():
        label = predict_label(model.evaluate(x))
        drivers = ([ds_binary] if model.n_outputs <= 2 else []) + (
            [ds_multiclass, ds_multiclass_alt] if model.n_outputs >= 2 else [])
        for driver in drivers:
            out = driver(x, None, make_oracle(model, cfg), cfg, label)
            runs += 1
            for e in out.trace:
                passes += 1
                late += e["pass"] >= x.size
                # total charged after k passes, including the start-point evaluation
                limit = _bound(x.size, e["pass"])
                worst = max(worst, e["total_queries"] / limit)
                violations += e["total_queries"] > limit
    for fx in suite:
        for i, (x, label) in enumerate(zip(fx.dataset.images, fx.dataset.labels)):
            out = ds_multiclass(x, None, make_oracle(fx.model, FIXTURE_CFG), FIXTURE_CFG, label)
            runs += 1
            for e in out.trace:
                passes += 1
                limit = _bound(x.n, e["pass"])
                worst = max(worst, e["total_queries"] / limit)
                violations += e["total_queries"] > limit

    h_passes = h_violations = 0
    for fx in suite:
        for i, (x, label) in enumerate(zip(fx.dataset.images, fx.dataset.labels)):
            for k in (1, 2, 4, 8):
                cfg = replace(FIXTURE_CFG, k=k, refine=False, seed=i)
                out = ds_hierarchy(x, None, make_oracle(fx.model, cfg), cfg, label)
                for e in out.trace:
                    h_passes += 1
                    batches = math.ceil(e["groups"] / cfg.batch_size)
                    h_violations += e["candidate_queries"] > e["groups"]
                    h_violations += e["pass_queries"] > e["groups"] + batches
    ok = violations == 0 and h_violations == 0 and runs > 0 and h_passes > 0
    record(3, "query bounds", ok,
           f"per-coordinate: {runs} runs, {passes} passes ({late} with k >= n), {violations} over 2n+n(k-1) "
           f"(max ratio {worst:.3f}); hierarchy: {h_passes} passes, {h_violations} with candidates over "
           f"the group count or charges over groups plus batches")


def test_04_soundness(suite):
    checked = violations = 0
    for fx in suite:
        for method in sorted(METHODS):
            if method == "binary":
                continue  # fixtures are ten-class models
            for d in (4.0, 8.0):
                cfg = replace(FIXTURE_CFG, d=d)
                for i, (x, label) in enumerate(zip(fx.dataset.images, fx.dataset.labels)):
                    run_cfg = replace(cfg, seed=cfg.seed ^ i)
                    out = METHODS[method](x, make_oracle(fx.model, run_cfg), run_cfg, label)
                    if out.status != FOUND:
                        continue
                    checked += 1
                    relabel = predict_label(fx.model.evaluate(out.x))
                    bad = (
                        relabel == label
                        or relabel != out.label
                        or linf_distance(x, out.x) > d + 1e-9
                        or out.x.min() < 0
                        or out.x.max() > 255
                    )
                    violations += bad
    record(4, "soundness of adversarial outcomes", violations == 0 and checked > 0,
           f"{checked} adversarial outcomes re-queried, {violations} violations")


def test_05_refinement():
    analytic = off = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 13))
        x = rng.integers(64, 192, n).astype(float)
        w = rng.integers(-64, 65, size=n) / 64.0
        if not np.any(w):
            w[0] = 1.0
        margin = float(rng.uniform(1, 30))
        model = LinearModel([w], [margin - w @ x])
        radius = margin / np.abs(w).sum()
        if radius > 50:
            continue
        cfg = AttackConfig(d=min(60.0, radius + float(rng.uniform(0.5, 10))), budget=4000)
        oracle = make_oracle(model, cfg)
        found = ds_binary(x, None, oracle, cfg, 0)
        out = ds_refinement(x, found.x, oracle, cfg, 0)
        final = out.refinement_trace[-1]
        analytic += 1
        good = (
            radius - 1e-9 <= final <= radius + cfg.refine_tol
            and linf_distance(x, out.x) <= final + 1e-9
            and predict_label(model.evaluate(out.x)) == 1
        )
        off += not good

    rounds = non_monotone = 0
    from vertexfuzz.fixtures import fixture_suite

    for fx in fixture_suite():
        for i, (x, label) in enumerate(zip(fx.dataset.images, fx.dataset.labels)):
            cfg = replace(FIXTURE_CFG, refine=False, seed=i)
            oracle = make_oracle(fx.model, cfg)
            found = ds_hierarchy(x, None, oracle, cfg, label)
            if not found.found:
                continue
            out = ds_refinement(x, found.x, oracle, cfg, label)
            t = out.refinement_trace
            rounds += len(t)
            bad = (
                any(b > a for a, b in zip(t, t[1:]))
                or t[0] > found.linf
                or predict_label(fx.model.evaluate(out.x)) == label
                or linf_distance(x, out.x) > t[-1] + 1e-9
            )
            non_monotone += bad
    ok = off == 0 and non_monotone == 0 and analytic > 0
    record(5, "refinement radius", ok,
           f"{analytic - off}/{analytic} within tolerance of |f(x)|/||w||_1; "
           f"{non_monotone} fixture runs non-monotone or non-adversarial over {rounds} rounds")


def test_06_desk_scale_efficacy(suite):
    rows = campaign_rows(suite, FIXTURE_CFG, "attack")
    attempted = [r for r in rows if r["status"] not in ("skipped", "error")]
    asr = success_rate(attempted)
    base = success_rate([r for r in campaign_rows(suite, FIXTURE_CFG, "random")
                         if r["status"] not in ("skipped", "error")])
    _, median = query_stats(attempted)
    images = sum(len(fx.dataset) for fx in suite)
    ok = images >= 16 and asr >= 0.9 and asr > base and median < FIXTURE_CFG.budget / 4
    record(6, "desk-scale efficacy", ok,
           f"{images} images, ASR {asr:.4f} vs random {base:.4f}, median queries {median:g} "
           f"< {FIXTURE_CFG.budget / 4:g}")


def test_07_hierarchy_query_reduction(suite):
    avg = {}
    for k in (4, 1):
        rows = campaign_rows(suite, replace(FIXTURE_CFG, k=k, refine=False), "hierarchy")
        avg[k] = query_stats(rows)[0]
    record(7, "hierarchical grouping saves queries", avg[4] <= avg[1],
           f"average queries k=4 {avg[4]:.2f} <= k=1 {avg[1]:.2f} "
           f"({100 * (1 - avg[4] / avg[1]):.1f}% fewer)")


def test_08_metrics_arithmetic():
    errors = []
    if success_rate([True] * 831 + [False] * 169) != 0.831:
        errors.append("success rate")
    found = "adversarial-found"
    rows = [{"status": found, "attack_queries": q} for q in (400, 423, 424, 500)]
    rows.append({"status": "budget-exhausted", "attack_queries": 20000})
    if query_stats(rows) != (436.75, 423.5):
        errors.append(f"query stats {query_stats(rows)}")
    rng = np.random.default_rng(8)
    pairs = [(rng.uniform(1, 255, 64), rng.uniform(0, 255, 64)) for _ in range(200)]
    # independent recomputation in plain Python
    linf = sum(max(abs(a - b) for a, b in zip(x, y)) / max(abs(a) for a in x) for x, y in pairs) / len(pairs)
    l2 = sum(
        math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y))) / math.sqrt(sum(a * a for a in x)) for x, y in pairs
    ) / len(pairs)
    if abs(avg_distortion_linf(pairs) - linf) > 1e-12 or abs(avg_distortion_l2(pairs) - l2) > 1e-12:
        errors.append("distortion rates")
    x = np.full(10, 255.0)
    if abs(avg_distortion_linf([(x, x - 8)]) - 8 / 255) > 1e-12:
        errors.append("8/255 example")
    syn = [dict(status=found, attack_queries=q, dr_linf=q / 1e4, dr_l2=q / 2e4) for q in (423, 424)]
    agg = aggregate(syn + [dict(status="skipped", attack_queries=None, dr_linf=None, dr_l2=None)])
    if agg["median_queries"] != 423.5 or agg["success_rate"] != 1.0 or agg["attempted"] != 2:
        errors.append("aggregate")
    record(8, "metrics arithmetic", not errors,
           "ASR 0.831, median 423.5, ratio-of-norms AvgDR within 1e-12" if not errors else ", ".join(errors))


def test_09_remote_equivalence(suite, fixture_dir):
    cfg = replace(FIXTURE_CFG, seed=21)
    mismatched = compared = 0
    keys = ("status", "final_label", "attack_queries", "refinement_queries", "linf", "l2")
    for fx in suite:
        local = run_campaign(fx.dataset, fx.model, cfg).rows
        server = OracleServer(fx.model)
        server.start_background()
        try:
            tcp = run_campaign(fx.dataset, RemoteOracleConfig.tcp(server.endpoint), cfg).rows
        finally:
            server.shutdown()
            server.server_close()
        for a, b in zip(local, tcp):
            compared += 1
            mismatched += any(a[k] != b[k] for k in keys)
    # a child process over stdio, through the command-line client
    model = fixture_dir / "fixture0.dsmodel"
    cmd = f"{sys.executable} -m vertexfuzz serve-oracle --model {model} --stdio"
    stdio = run_campaign(suite[0].dataset, RemoteOracleConfig(command=cmd), cfg).rows
    for a, b in zip(run_campaign(suite[0].dataset, suite[0].model, cfg).rows, stdio):
        compared += 1
        mismatched += any(a[k] != b[k] for k in keys)
    record(9, "remote oracle equivalence", mismatched == 0,
           f"{compared} outcomes over TCP and stdio, {mismatched} differ in status, queries or label")


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance-fixtures")
    assert main(["gen-fixtures", "--out", str(out)]) == 0
    return out


def test_10_determinism(fixture_dir, tmp_path, capsys):
    model, data = str(fixture_dir / "fixture1.dsmodel"), str(fixture_dir / "fixture1.dsimg")

    def outputs(tag, parallelism):
        d = tmp_path / tag
        d.mkdir()
        codes = [
            main(["campaign", "--model", model, "--dataset", data, "--seed", "4", "--budget", "2000",
                  "--parallelism", str(parallelism),
                  "--report-json", str(d / "r.json"), "--report-csv", str(d / "r.csv")]),
            main(["campaign", "--model", model, "--dataset", data, "--seed", "4", "--method", "random",
                  "--report-json", str(d / "rand.json"), "--report-csv", str(d / "rand.csv")]),
            main(["attack", "--model", model, "--input", data, "--index", "5", "--seed", "4",
                  "--output", str(d / "a.json")]),
            main(["gen-fixtures", "--out", str(d / "fx")]),
            main(["verify-core", "--trials", "20", "--seed", "4"]),
        ]
        files = {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}
        files["stdout"] = capsys.readouterr().out.replace(str(d), "<out>").encode()
        return codes, files

    codes1, first = outputs("one", 1)
    codes2, second = outputs("two", 4)
    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    ok = codes1 == codes2 == [0] * 5 and not differing and "a.adv.dsimg" in first
    record(10, "determinism", ok,
           f"{len(first)} output files byte-identical across two runs" if ok else f"differ: {differing}")
