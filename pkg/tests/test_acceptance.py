"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run the whole gate with ``pytest tests/test_acceptance.py -s`` or directly
with ``python3 tests/test_acceptance.py``. Passing ``--pin`` to the script
re-measures the reference benchmark and rewrites the fixture file.
"""

import json
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from dsmhn.cli import main as cli_main
from dsmhn.codes import hamming_paired, pack, quantize
from dsmhn.data import SplitSpec, SynthSpec, generate_synthetic, split
from dsmhn.gradcheck import run_gradcheck
from dsmhn.model import default_configs, encode_relaxed
from dsmhn.numerics import make_rng
from dsmhn.objective import LOSS_KINDS, PairwiseLoss, code_similarity
from dsmhn.retrieval import evaluate, random_codes
from dsmhn.trainer import preset, train

sys.path.insert(0, str(Path(__file__).parent))
from oracles import brute_evaluate  # noqa: E402

FIXTURE = Path(__file__).parent / "fixtures" / "reference_benchmark.json"
REFERENCE_BITS = 16
BASELINE_MARGIN = 0.30
PIN_TOLERANCE = 0.05
TASKS = {"ixt": ("x", "y"), "txi": ("y", "x"), "ixi": ("x", "x")}


def announce(number, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    capture = getattr(announce, "capture", None)
    if capture is not None:
        with capture.global_and_fixture_disabled():
            print(line)
    else:
        print(line)
    return passed


@pytest.fixture(autouse=True)
def _expose_capture(request):
    announce.capture = request.config.pluginmanager.getplugin("capturemanager")
    yield
    announce.capture = None


def load_pins():
    return json.loads(FIXTURE.read_text())


# ----------------------------------------------------------------------------
# Reference benchmark: C=4 single-label classes, d_x=64, d_y=32, n=1200,
# noise 0.15, 16-bit codes, desk preset, seed 0.
# ----------------------------------------------------------------------------

@lru_cache(maxsize=None)
def reference_split():
    ds = generate_synthetic(SynthSpec())
    return split(ds, SplitSpec())


def reference_run(loss="contrastive", gamma=0.5):
    return _reference_run(loss, float(gamma))


@lru_cache(maxsize=None)
def _reference_run(loss, gamma):
    parts = reference_split()
    db, q = parts.database, parts.query
    cx, cy = default_configs(db.d_x, db.d_y, REFERENCE_BITS, db.num_classes)
    tc = preset("desk", loss=PairwiseLoss(loss), gamma=gamma)
    start = time.perf_counter()
    px, py, _ = train(db, (cx, cy), tc, train_indices=parts.train_indices)
    relaxed = {
        ("q", "x"): encode_relaxed(px, cx, q.x_features),
        ("q", "y"): encode_relaxed(py, cy, q.y_features),
        ("db", "x"): encode_relaxed(px, cx, db.x_features),
        ("db", "y"): encode_relaxed(py, cy, db.y_features),
    }
    codes = {key: quantize(z) for key, z in relaxed.items()}
    maps = {name: evaluate(codes["q", a], q.labels, codes["db", b], db.labels).map
            for name, (a, b) in TASKS.items()}
    imbalance = {m: float(np.abs(codes["db", m].unpack().mean(axis=0)).mean()) for m in "xy"}
    residual = {m: float(np.abs(np.abs(relaxed["db", m]) - 1).mean()) for m in "xy"}
    return {"map": maps, "imbalance": imbalance, "residual": residual,
            "iterations": tc.iterations, "seconds": time.perf_counter() - start}


@lru_cache(maxsize=None)
def random_baseline():
    parts = reference_split()
    rng = make_rng(12345)
    q = random_codes(parts.query.n, REFERENCE_BITS, rng)
    db = random_codes(parts.database.n, REFERENCE_BITS, rng)
    return evaluate(q, parts.query.labels, db, parts.database.labels).map


# ----------------------------------------------------------------------------
# Criteria
# ----------------------------------------------------------------------------

def criterion_1():
    start = time.perf_counter()
    results = []
    for kind in LOSS_KINDS:
        results.append(run_gradcheck(kind, alpha=0.0, beta=0.0, gamma=0.0))
        results.append(run_gradcheck(kind, alpha=1.0, beta=0.5, gamma=0.5))
    printed = [
        run_gradcheck("l1", variant="printed_l1", alpha=0.0, beta=0.0, gamma=0.0),
        run_gradcheck("l2", variant="printed_class_delta"),
        run_gradcheck("l2", variant="printed_hash_delta"),
    ]
    elapsed = time.perf_counter() - start
    worst = max(r.max_rel_error for r in results)
    printed_best = min(r.max_rel_error for r in printed)
    ok = all(r.passed for r in results) and not any(r.passed for r in printed) and elapsed < 30
    return ok, (f"max rel err {worst:.2e} over 4 losses x (alone, composite); "
                f"as-printed formulas fail with rel err >= {printed_best:.2e}; {elapsed:.1f}s")


def criterion_2():
    start = time.perf_counter()
    rng = make_rng(2024)
    ok = True
    for code_length in (8, 16, 32, 48, 64, 128):
        a = np.where(rng.random((100_000, code_length)) < 0.5, 1, -1).astype(np.int8)
        b = np.where(rng.random((100_000, code_length)) < 0.5, 1, -1).astype(np.int8)
        packed = hamming_paired(pack(a), pack(b))
        dense = (a != b).sum(axis=1)
        c = code_similarity(a.T.astype(np.float64), b.T.astype(np.float64))
        ok &= bool(np.array_equal(packed, dense))
        ok &= bool(np.array_equal(packed.astype(np.float64), (code_length - code_length * c) / 2))
    elapsed = time.perf_counter() - start
    ok &= elapsed < 10
    return ok, f"6 code lengths x 1e5 pairs, packed == dense and ham == (L - Lc)/2; {elapsed:.1f}s"


def criterion_3():
    start = time.perf_counter()
    rng = make_rng(77)
    worst = 0.0
    ok = True
    for _ in range(50):
        n_db = int(rng.integers(1, 171))
        n_q = int(rng.integers(1, 31))
        code_length = int(rng.integers(2, 33))
        n_cls = int(rng.integers(2, 6))
        qd = np.where(rng.random((n_q, code_length)) < 0.5, 1, -1)
        dd = np.where(rng.random((n_db, code_length)) < 0.5, 1, -1)
        ql = (rng.random((n_q, n_cls)) < 0.35).astype(np.uint8)
        dl = (rng.random((n_db, n_cls)) < 0.35).astype(np.uint8)
        ks = (1, 10, 50, 500)
        report = evaluate(pack(qd), ql, pack(dd), dl, ks=ks)
        mean_ap, pk, pr, skipped = brute_evaluate(qd.tolist(), ql.tolist(), dd.tolist(), dl.tolist(), ks)
        errs = [abs(report.map - mean_ap)]
        errs += [abs(p - pk[k]) for k, p in report.p_at_k]
        errs += [abs(p - r) for (_, p), r in zip(report.pr_curve, pr)]
        worst = max(worst, max(errs))
        ok &= report.n_no_relevant == skipped
    elapsed = time.perf_counter() - start
    ok &= worst <= 1e-12 and elapsed < 10
    return ok, f"50 instances, max |diff| vs brute force {worst:.1e}; {elapsed:.1f}s"


def criterion_4():
    run = reference_run()
    base = random_baseline()
    pins = load_pins()
    gaps = {t: run["map"][t] - base for t in TASKS}
    gate = all(g >= BASELINE_MARGIN for g in gaps.values())
    pinned = all(abs(run["map"][t] - pins["map"][t]) <= PIN_TOLERANCE for t in TASKS)
    ok = gate and pinned and run["iterations"] <= 5000 and run["seconds"] < 300
    maps = ", ".join(f"{t}={run['map'][t]:.4f}" for t in TASKS)
    return ok, (f"{maps}; random baseline {base:.4f}; min gain {min(gaps.values()):.4f} "
                f"(need {BASELINE_MARGIN}); {run['iterations']} iters in {run['seconds']:.0f}s")


def criterion_5():
    low = reference_run(gamma=0.0)
    high = reference_run(gamma=50.0)
    ref = reference_run()
    balance_ok = all(high["imbalance"][m] < low["imbalance"][m] for m in "xy")
    residual_ok = all(ref["residual"][m] < 0.2 for m in "xy")
    return balance_ok and residual_ok, (
        f"imbalance gamma=50 x={high['imbalance']['x']:.4f} y={high['imbalance']['y']:.4f} vs "
        f"gamma=0 x={low['imbalance']['x']:.4f} y={low['imbalance']['y']:.4f}; "
        f"quantization residual x={ref['residual']['x']:.4f} y={ref['residual']['y']:.4f} (< 0.2)"
    )


def criterion_6():
    runs = {kind: reference_run(loss=kind) for kind in LOSS_KINDS}
    spreads = {}
    for task in ("ixt", "txi"):
        values = [runs[k]["map"][task] for k in LOSS_KINDS]
        spreads[task] = max(values) - min(values)
    ok = all(s < 0.10 for s in spreads.values())
    table = "; ".join(f"{k} ixt={runs[k]['map']['ixt']:.4f} txi={runs[k]['map']['txi']:.4f}" for k in LOSS_KINDS)
    return ok, f"spread ixt={spreads['ixt']:.4f} txi={spreads['txi']:.4f} (< 0.10); {table}"


def _pipeline(workdir: Path, config: Path):
    run = workdir / "run"
    steps = [
        ["synth", "--config", str(config), "--out", str(workdir / "data.dsmd")],
        ["train", str(workdir / "data.dsmd"), "--config", str(config), "--out", str(run)],
        ["encode", str(run / "x.dsmp"), str(run / "query.dsmd"), "--modality", "x", "--out", str(workdir / "qx.dsmb")],
        ["encode", str(run / "y.dsmp"), str(run / "database.dsmd"), "--modality", "y", "--out", str(workdir / "dby.dsmb")],
        ["eval", str(workdir / "qx.dsmb"), str(run / "query.dsmd"), str(workdir / "dby.dsmb"),
         str(run / "database.dsmd"), "--config", str(config), "--dump-rankings", "--out", str(workdir / "eval")],
    ]
    return all(cli_main(step) == 0 for step in steps)


def criterion_7(tmp_path: Path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"schema_version": 1, "seed": 11, "train": {"iterations": 100},
                                  "eval": {"ks": [1, 10, 100]}}))
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    ok = _pipeline(a, config) and _pipeline(b, config)
    artifacts = ["data.dsmd", "run/x.dsmp", "run/y.dsmp", "run/query.dsmd", "run/database.dsmd",
                 "qx.dsmb", "dby.dsmb", "eval/p_at_k.csv", "eval/pr_curve.csv", "eval/rankings.csv",
                 "eval/report.txt"]
    differing = [name for name in artifacts if (a / name).read_bytes() != (b / name).read_bytes()]
    ok = ok and not differing
    detail = f"{len(artifacts)} artifacts byte-identical across two runs" if ok else f"differ: {differing}"
    return ok, detail


# ----------------------------------------------------------------------------
# pytest entry points
# ----------------------------------------------------------------------------

def test_criterion_1_gradient_oracle():
    assert announce(1, *criterion_1())


def test_criterion_2_hamming_identities():
    assert announce(2, *criterion_2())


def test_criterion_3_metric_oracle():
    assert announce(3, *criterion_3())


def test_criterion_4_reference_retrieval():
    assert announce(4, *criterion_4())


def test_criterion_5_bit_balance():
    assert announce(5, *criterion_5())


def test_criterion_6_loss_robustness():
    assert announce(6, *criterion_6())


def test_criterion_7_determinism(tmp_path):
    assert announce(7, *criterion_7(tmp_path))


def pin_fixture():
    """Measure the reference benchmark and freeze the values."""
    runs = {kind: reference_run(loss=kind) for kind in LOSS_KINDS}
    payload = {
        "description": "Reference synthetic benchmark, desk preset, seed 0, 16-bit codes",
        "random_baseline_map": random_baseline(),
        "map": runs["contrastive"]["map"],
        "imbalance": {"gamma_0": reference_run(gamma=0.0)["imbalance"],
                      "gamma_0.5": runs["contrastive"]["imbalance"],
                      "gamma_50": reference_run(gamma=50.0)["imbalance"]},
        "quantization_residual": runs["contrastive"]["residual"],
        "map_by_loss": {k: r["map"] for k, r in runs.items()},
        "iterations": runs["contrastive"]["iterations"],
    }
    FIXTURE.parent.mkdir(exist_ok=True)
    FIXTURE.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=2, sort_keys=True))


if __name__ == "__main__":
    if "--pin" in sys.argv:
        pin_fixture()
        sys.exit(0)
    import tempfile

    outcome = [announce(1, *criterion_1()), announce(2, *criterion_2()), announce(3, *criterion_3()),
               announce(4, *criterion_4()), announce(5, *criterion_5()), announce(6, *criterion_6())]
    with tempfile.TemporaryDirectory() as tmp:
        outcome.append(announce(7, *criterion_7(Path(tmp))))
    sys.exit(0 if all(outcome) else 1)
