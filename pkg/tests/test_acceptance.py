"""Acceptance suite.

One test per criterion; each prints a single ``criterion N: PASS|FAIL`` line
with the measured numbers, then asserts. Trained classifiers are cached at
module level and shared by criteria 5, 6 and 8, so running the whole file
trains each (mode, ratio, seed) combination once.
"""
from __future__ import annotations

import dataclasses
import itertools
import time
from dataclasses import dataclass

import numpy as np
import pytest

from cplayer import cpl, pcio
from cplayer.bench import doubling_ratios, time_op
from cplayer.cpnet import checkpoint as ck
from cplayer.cpnet.ablate import output_digest
from cplayer.cpnet.config import NetworkConfig, TrainConfig
from cplayer.cpnet.data import dataset_for, load_split
from cplayer.cpnet.model import CPNet
from cplayer.cpnet.training import confusion_matrix, metrics_from_confusion, predict_logits, train
from oracles import naive_cpl

pytestmark = pytest.mark.acceptance


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


def _matches_oracle(F: np.ndarray, k: int, mode: str) -> bool:
    sel = cpl.cpl_select(F, k, mode)
    ref = naive_cpl(F, k, mode)
    return (sel.idx.tolist() == ref["idx"] and sel.uidx.tolist() == ref["uidx"]
            and sel.f_s.tolist() == ref["f_s"] and sel.fr.tolist() == ref["fr"]
            and sel.ordered.tolist() == ref["ordered"] and sel.resized.tolist() == ref["resized"]
            and (mode == "cpl" or sel.expanded.tolist() == ref["expanded"]))


# ---- 1. oracle equivalence

VALUES = np.array([-1.0, 0.0, 1.0, 2.0])


def test_criterion_1_oracle_equivalence(capsys):
    start = time.perf_counter()
    checked = mismatched = 0
    # every matrix over {-1, 0, 1, 2} for shapes with at most six cells
    shapes = [(n, d) for n in range(1, 9) for d in range(1, 6) if n * d <= 6]
    for n, d in shapes:
        for values in itertools.product(range(4), repeat=n * d):
            F = VALUES[list(values)].reshape(n, d)
            for mode in cpl.MODES:
                for k in (1, n + 1):
                    checked += 1
                    mismatched += not _matches_oracle(F, k, mode)
    exhaustive = checked
    # random sign patterns over every shape with n <= 8, d <= 5
    rng = np.random.default_rng(1)
    for n, d in itertools.product(range(1, 9), range(1, 6)):
        for _ in range(50):
            F = rng.choice(VALUES, size=(n, d))
            k = int(rng.integers(1, 2 * n + 2))
            for mode in cpl.MODES:
                checked += 1
                mismatched += not _matches_oracle(F, k, mode)
    # 10^4 random real matrices in each mode
    for i in range(10_000):
        n, d = int(rng.integers(1, 33)), int(rng.integers(1, 17))
        F = rng.standard_normal((n, d))
        k = int(rng.integers(1, 2 * n + 1))
        for mode in cpl.MODES:
            checked += 1
            mismatched += not _matches_oracle(F, k, mode)
    seconds = time.perf_counter() - start
    ok = mismatched == 0 and seconds < 60
    report(capsys, 1, ok, f"{checked} comparisons ({exhaustive} exhaustive), {mismatched} mismatches, "
                          f"{seconds:.1f}s (limit 60s)")


# ---- 2. permutation invariance

def _generic(F: np.ndarray) -> bool:
    if np.any((F == F.max(axis=0)).sum(axis=0) > 1):
        return False
    f_s = cpl.cpl_select(F, 1).f_s
    return len(np.unique(f_s)) == len(f_s)


def test_criterion_2_permutation_invariance(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    pairs = failures = 0
    while pairs < 1000:
        n, d = int(rng.integers(2, 65)), int(rng.integers(1, 33))
        F = rng.standard_normal((n, d))
        if not _generic(F):
            continue
        perm = rng.permutation(n)
        k = int(rng.integers(1, n + 1))
        for mode in cpl.MODES:
            a = cpl.gather_rows(F, cpl.cpl_select(F, k, mode).resized)
            b = cpl.gather_rows(F[perm], cpl.cpl_select(F[perm], k, mode).resized)
            failures += not np.array_equal(a, b)
        pairs += 1
    seconds = time.perf_counter() - start
    ok = failures == 0 and seconds < 10
    report(capsys, 2, ok, f"{pairs} generic pairs x 2 modes, {failures} unequal outputs, "
                          f"{seconds:.2f}s (limit 10s)")


# ---- 3. critical retention

def test_criterion_3_critical_retention(capsys):
    rng = np.random.default_rng(3)
    failures = 0
    for _ in range(1000):
        F = rng.standard_normal((int(rng.integers(1, 65)), int(rng.integers(1, 33))))
        m = cpl.cpl_select(F, 1).m
        sel = cpl.cpl_select(F, m + int(rng.integers(0, 3 * m + 1)), "cpl")
        retained = set(sel.resized.tolist()) == set(sel.uidx.tolist())
        failures += not (retained and np.array_equal(cpl.output_max(cpl.gather_rows(F, sel.resized)),
                                                     sel.f_max))
    # the weighted layer resizes its d-long expanded list, so it needs k >= d
    wfail = 0
    for _ in range(1000):
        F = rng.standard_normal((int(rng.integers(1, 65)), int(rng.integers(1, 33))))
        sel = cpl.cpl_select(F, F.shape[1] + int(rng.integers(0, 20)), "wcpl")
        wfail += not np.array_equal(cpl.output_max(cpl.gather_rows(F, sel.resized)), sel.f_max)
    ok = failures == 0 and wfail == 0
    report(capsys, 3, ok, f"CPL k>=m: {failures}/1000 lost a column max; "
                          f"WCPL k>=d: {wfail}/1000 lost a column max")


# ---- 4. gradient suite

def test_criterion_4_gradient_suite(capsys):
    import test_gradients as tg

    ops = {
        "edge_conv (train BN)": lambda s: tg.case_edge_conv(s, True),
        "edge_conv (eval BN)": lambda s: tg.case_edge_conv(s, False),
        "shared_mlp": tg.case_shared_mlp,
        "batch_norm (train)": lambda s: tg.case_batch_norm(s, True),
        "batch_norm (eval)": lambda s: tg.case_batch_norm(s, False),
        "gather/scatter": tg.case_gather_scatter,
        "global_max_pool": tg.case_global_max_pool,
        "softmax_cross_entropy": tg.case_softmax_cross_entropy,
    }
    target, parts, failed = 25, [], []
    for name, check in ops.items():
        passed = seed = 0
        while passed < target and seed < 50 * target:
            try:
                # False means the instance sits within the kink margin and was not checked
                passed += check(seed)
            except AssertionError as exc:
                failed.append(f"{name} seed {seed}: {exc}")
            seed += 1
        parts.append(f"{name} {passed}")
        if passed < 20:
            failed.append(f"{name}: only {passed} instances")
    ok = not failed
    detail = f"rel err < {tg.TOL:g} on " + ", ".join(parts)
    report(capsys, 4, ok, detail + ("" if ok else f"; failures: {failed[:3]}"))


# ---- shared training runs for 5, 6 and 8

ACCEPT_NET = NetworkConfig(input_points=256, knn=10, edgeconv_width=64, bottleneck=64)
ACCEPT_TRAIN = TrainConfig(epochs=30, train_size=512, test_size=128)
SEEDS = (0, 1, 2)


@dataclass
class Run:
    model: CPNet
    accuracy: float
    seconds: float


_RUNS: dict[tuple[str, str, int], Run] = {}
_DATA: dict[str, tuple[np.ndarray, np.ndarray]] = {}


def _split(name: str):
    if name not in _DATA:
        _DATA[name] = load_split(dataset_for(ACCEPT_NET, ACCEPT_TRAIN), name)
    return _DATA[name]


def trained(mode: str, ratio: str, seed: int) -> Run:
    key = (mode, ratio, seed)
    if key not in _RUNS:
        X, y = _split("train")
        Xt, yt = _split("test")
        net = dataclasses.replace(ACCEPT_NET, downsample=mode, ratios=(ratio,), seed=seed)
        model = CPNet(net)
        start = time.perf_counter()
        train(model, X, y, dataclasses.replace(ACCEPT_TRAIN, seed=seed))
        logits = predict_logits(model, Xt, sampler_seed=seed)
        ev = metrics_from_confusion(confusion_matrix(yt, logits.argmax(1), net.num_classes))
        _RUNS[key] = Run(model, ev.overall_acc, time.perf_counter() - start)
    return _RUNS[key]


def _mean(mode: str, ratio: str) -> float:
    return float(np.mean([trained(mode, ratio, s).accuracy for s in SEEDS]))


# ---- 5. desk-scale learning

@pytest.mark.slow
def test_criterion_5_desk_scale_learning(capsys):
    runs = [trained("cpl", r, s) for r in ("1/4", "1/16", "1") for s in SEEDS]
    seconds = sum(r.seconds for r in runs)
    quarter, sixteenth, full = _mean("cpl", "1/4"), _mean("cpl", "1/16"), _mean("cpl", "1")
    gap = abs(full - sixteenth)
    ok = quarter >= 0.90 and gap <= 0.05 and seconds <= 1800
    report(capsys, 5, ok, f"ratio 1/4 mean acc {quarter:.4f} (>= 0.90); ratio 1 {full:.4f}, "
                          f"ratio 1/16 {sixteenth:.4f}, gap {100 * gap:.2f}pp (<= 5pp); "
                          f"{seconds / 60:.1f} min (limit 30)")


# ---- 6. CPL against the random sampler

@pytest.mark.slow
def test_criterion_6_cpl_vs_random(capsys):
    cpl_mean, rand_mean = _mean("cpl", "1/4"), _mean("random", "1/4")
    Xt, _ = _split("test")
    cpl_model = trained("cpl", "1/4", 0).model
    a, b = predict_logits(cpl_model, Xt), predict_logits(cpl_model, Xt)
    deterministic = a.tobytes() == b.tobytes()
    rand_model = trained("random", "1/4", 0).model
    digests = {output_digest(predict_logits(rand_model, Xt, sampler_seed=s)) for s in (0, 1, 2)}
    ok = cpl_mean >= rand_mean - 0.01 and deterministic and len(digests) > 1
    report(capsys, 6, ok, f"CPL {cpl_mean:.4f} vs random {rand_mean:.4f} (need CPL >= random - 1pp); "
                          f"CPL repeat inference identical={deterministic}; "
                          f"random inference distinct digests over 3 sampler seeds={len(digests)}")


# ---- 7. complexity

def test_criterion_7_complexity(capsys):
    start = time.perf_counter()
    ns = [2 ** p for p in range(16, 21)]
    rows = [time_op("cpl", n, 64, repeats=5) for n in ns]
    ratios = doubling_ratios(rows)
    fps = time_op("fps", 4096, 3, k=1024, repeats=5).median_seconds
    cpl_feat = time_op("cpl", 4096, 64, k=1024, repeats=5).median_seconds
    cpl_xyz = time_op("cpl", 4096, 3, k=1024, repeats=5).median_seconds
    seconds = time.perf_counter() - start
    speedup = fps / max(cpl_feat, cpl_xyz)
    ok = max(ratios) <= 2.6 and speedup >= 2 and seconds < 300
    report(capsys, 7, ok, "cpl doubling ratios at d=64 " + ", ".join(f"{r:.2f}" for r in ratios)
           + f" (<= 2.6); fps/cpl at n=4096, k=1024: {speedup:.0f}x (>= 2x); {seconds:.0f}s (limit 300s)")


# ---- 8. pipeline permutation invariance

@pytest.mark.slow
def test_criterion_8_pipeline_permutation_invariance(capsys):
    model = trained("cpl", "1/4", 0).model
    Xt, _ = _split("test")
    clouds = Xt[:100]
    rng = np.random.default_rng(8)
    permuted = np.stack([c[rng.permutation(len(c))] for c in clouds])
    diff = float(np.abs(predict_logits(model, clouds) - predict_logits(model, permuted)).max())
    ok = diff < 1e-5
    report(capsys, 8, ok, f"max |logit change| over {len(clouds)} test clouds = {diff:.3g} (< 1e-5)")


# ---- 9. serialization

OFF_SEEDS = [
    b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n",
    b"OFF\n# unit square\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n",
    b"OFF4 2 0\n0 0 0 1 0 0 0 1 0 0 0 1\n3 0 1 2\n3 0 2 3\n",
]
XYZ_SEEDS = [b"0 0 0\n1.5 -2 3e-4\n", b"0.123456789 1e10 -7\n\n2 2 2\n", b"1 2 3 0.5 0.5 0.5\n"]


def _mutate(data: bytes, rng: np.random.Generator) -> bytes:
    buf = bytearray(data)
    for _ in range(int(rng.integers(1, 9))):
        kind, pos, byte = int(rng.integers(3)), int(rng.integers(len(buf) + 1)), int(rng.integers(256))
        if kind == 0 and buf:
            buf[pos % len(buf)] = byte
        elif kind == 1:
            buf.insert(pos, byte)
        elif buf:
            del buf[pos % len(buf)]
    return bytes(buf)


def test_criterion_9_serialization(capsys, tmp_path):
    problems = []
    # checkpoint: encode, decode, encode again is byte-identical and loads the same weights
    net = dataclasses.replace(ACCEPT_NET, edgeconv_width=16, bottleneck=16, fc_dims=(32, 16))
    model = CPNet(net)
    X, y = load_split(dataset_for(net, TrainConfig(train_size=32, test_size=8)), "train")
    result = train(model, X, y, TrainConfig(epochs=1, train_size=32, test_size=8))
    path = tmp_path / "m.cpnt"
    ckpt = ck.Checkpoint.from_model(model, TrainConfig(), 1, result.optimizer)
    ck.checkpoint_save(ckpt, path)
    raw = path.read_bytes()
    back = ck.checkpoint_load(path)
    if ck.encode(back) != raw:
        problems.append("checkpoint re-encode differs")
    if not all(np.array_equal(back.tensors[k], v) for k, v in ckpt.tensors.items()):
        problems.append("checkpoint tensors differ")
    if predict_logits(back.build_model(), X[:8]).tobytes() != predict_logits(model, X[:8]).tobytes():
        problems.append("checkpoint logits differ")

    rng = np.random.default_rng(9)
    pts = rng.standard_normal((64, 3)) * rng.uniform(1e-3, 1e3)
    pcio.write_xyz(pcio.PointCloud(pts), tmp_path / "c.xyz")
    xyz_err = float(np.abs(pcio.read_xyz(tmp_path / "c.xyz").points - pts).max() / np.abs(pts).max())
    if xyz_err > 1e-7:
        problems.append(f"xyz error {xyz_err:.2g}")
    unit = pcio.normalize_unit_sphere(pcio.PointCloud(rng.standard_normal((64, 3))))
    pcio.write_ply_depth_colored(unit, tmp_path / "c.ply")
    ply_err = float(np.abs(pcio.read_ply(tmp_path / "c.ply").points - unit.points).max())
    if ply_err > 1e-5:
        problems.append(f"ply error {ply_err:.2g}")

    crashes, rejected = [], 0
    for i in range(100_000):
        parse, seeds = (pcio.parse_off, OFF_SEEDS) if i % 2 == 0 else (pcio.parse_xyz, XYZ_SEEDS)
        data = _mutate(seeds[i % 3], rng)
        try:
            parse(data)
        except pcio.PcioError:
            rejected += 1
        except Exception as exc:  # anything else is a crash
            crashes.append((data, repr(exc)))
    if crashes:
        problems.append(f"{len(crashes)} parser crashes, first {crashes[0]}")
    ok = not problems
    report(capsys, 9, ok, f"checkpoint bit-exact, xyz rel err {xyz_err:.1e} (<= 1e-7), ply err "
                          f"{ply_err:.1e} (<= 1e-5); 100000 fuzzed OFF/XYZ inputs, {rejected} rejected "
                          f"cleanly, {len(crashes)} crashes" + ("" if ok else f"; {problems}"))
