"""Acceptance criteria 1-11.

Each test records a pass/fail line in ``conftest.ACCEPTANCE`` (printed in the
pytest summary) and then asserts. Run as a script to print just the lines:

    python tests/test_acceptance.py [--skip-slow]
"""

import io
import math
import sys
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from evgesture import dataset, stats, synth
from evgesture import events as ev
from evgesture import tensor as tn
from evgesture.btsm import btsm_backward, btsm_forward
from evgesture.lnes import build_lnes
from evgesture.model import (
    VARIANTS,
    LabeledSet,
    ModelConfig,
    TrainConfig,
    ablate,
    build_model,
    checkpoint_bytes,
    load_checkpoint,
    train,
)
from evgesture.ssm import (
    SsmParams,
    selective_scan,
    selective_scan_backward,
    selective_scan_forward,
    ssm_block,
    ssm_block_backward,
    ssm_block_forward,
)

from conftest import ACCEPTANCE, random_stream
from oracles import btsm_oracle, lnes_replay, naive_scan

SEEDS = range(10)
TINY = dict(height=8, width=8, num_classes=3, widths=(2, 4), T=2, Bn=2, dtype="float64")

# Criterion 8 recipe: the default 64x64 synthetic corpus with 36 sequences per
# class (24/6/6 train/val/test), trained 40 epochs at batch 8.
ABLATION_PER_CLASS = 36
ABLATION_TC = dict(lr=3e-3, epochs=40, batch_size=8, patience=100)


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def ssm_params(rng, F, S):
    return SsmParams(A_log=rng.normal(scale=0.5, size=(F, S)), W_B=rng.normal(size=(S, F)),
                     W_C=rng.normal(size=(S, F)), w_delta=rng.normal(size=F),
                     b_delta=np.array(rng.normal()), D=rng.normal(size=F))


def btsm_shape(rng):
    return (int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 5)),
            int(rng.choice([4, 8, 16])))


# -- 1-3: BTSM ---------------------------------------------------------------


def test_c01_btsm_exactness():
    rng = np.random.default_rng(101)
    tensors = [rng.normal(size=btsm_shape(rng)) for _ in range(200)]
    wants = [btsm_oracle(x) for x in tensors]
    t0 = time.perf_counter()
    got = [btsm_forward(x) for x in tensors]
    elapsed = time.perf_counter() - t0
    equal = sum(g.tobytes() == w.tobytes() for g, w in zip(got, wants))
    record(1, equal == 200 and elapsed < 1.0,
           f"{equal}/200 bitwise equal to the oracle, {elapsed * 1e3:.1f} ms (< 1 s)")


def test_c02_btsm_zero_parameters():
    counts = []
    for widths in [(8, 16, 32), (4, 8), (8,)]:
        for name in ("+btsm", "full"):
            m = build_model(ModelConfig(widths=widths, **VARIANTS[name]))
            counts.append(m.inventory()["btsm"])
    record(2, all(c == 0 for c in counts) and len(counts) == 6,
           f"btsm parameter counts over 6 models: {sorted(set(counts))}")


def test_c03_permutation_invariants():
    rng = np.random.default_rng(103)
    ok_multiset = ok_static = ok_inverse = True
    for _ in range(200):
        x = rng.normal(size=btsm_shape(rng))
        y = btsm_forward(x)
        F = x.shape[3]
        for lo, hi in ((0, F // 4), (F // 4, F // 2), (F // 2, F)):
            for b in range(x.shape[0]):
                a = np.sort(x[b, :, :, lo:hi], axis=None)
                c = np.sort(y[b, :, :, lo:hi], axis=None)
                ok_multiset &= a.tobytes() == c.tobytes()
        ok_static &= y[..., F // 2:].tobytes() == x[..., F // 2:].tobytes()
        ok_inverse &= btsm_backward(y).tobytes() == x.tobytes()
    record(3, ok_multiset and ok_static and ok_inverse,
           f"200 tensors: group multisets {ok_multiset}, static half {ok_static}, "
           f"inverse {ok_inverse}")


# -- 4, 5, 9: SSM and gradients ----------------------------------------------


def test_c04_scan_oracle():
    rng = np.random.default_rng(104)
    cases = []
    for _ in range(100):
        N, F, S = (int(v) for v in (rng.integers(1, 65), rng.integers(1, 9), rng.integers(1, 9)))
        p = ssm_params(rng, F, S)
        cases.append((rng.normal(size=(N, F)), p))
    wants = [naive_scan(x, p.A, p.W_B, p.W_C, p.w_delta, p.b_delta, p.D) for x, p in cases]
    t0 = time.perf_counter()
    got = [selective_scan(x, p) for x, p in cases]
    elapsed = time.perf_counter() - t0
    err = max(float(np.max(np.abs(g - w))) for g, w in zip(got, wants))
    record(4, err <= 1e-12 and elapsed < 5.0,
           f"100 instances, max |diff| {err:.2e} (<= 1e-12), {elapsed:.3f} s (< 5 s)")


def _grad_suite() -> dict[str, float]:
    """Worst relative error per backward over 10 seeds each."""
    worst: dict[str, float] = {}

    def note(name, rep):
        worst[name] = max(worst.get(name, 0.0), rep.max_rel_error)

    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 5, 5))
        wh, wv, gy = rng.normal(size=(2, 1, 3)), rng.normal(size=(2, 3, 1)), rng.normal(size=x.shape)
        gx, gwh, gwv = tn.conv_depthwise_asym_backward(gy, x, wh, wv)
        note("conv_asym", tn.grad_check(
            lambda: float(np.sum(gy * tn.conv_depthwise_asym(x, wh, wv))),
            {"x": x, "wh": wh, "wv": wv}, {"x": gx, "wh": gwh, "wv": gwv}))

        x = rng.normal(size=(2, 3, 4, 4))
        w, b, gy = rng.normal(size=(5, 3)), rng.normal(size=5), rng.normal(size=(2, 5, 4, 4))
        g = tn.conv_pointwise_backward(gy, x, w, b)
        note("pointwise", tn.grad_check(lambda: float(np.sum(gy * tn.conv_pointwise(x, w, b))),
                                        {"x": x, "w": w, "b": b}, dict(zip("xwb", g))))

        x, w, b = rng.normal(size=(4, 6)), rng.normal(size=(3, 6)), rng.normal(size=3)
        gy = rng.normal(size=(4, 3))
        g = tn.linear_backward(gy, x, w, b)
        note("linear", tn.grad_check(lambda: float(np.sum(gy * tn.linear(x, w, b))),
                                     {"x": x, "w": w, "b": b}, dict(zip("xwb", g))))

        z, labels = rng.normal(size=(5, 6)), rng.integers(0, 6, 5)
        _, _, gz = tn.softmax_cross_entropy(z, labels)
        note("softmax_ce", tn.grad_check(lambda: tn.softmax_cross_entropy(z, labels)[0],
                                         {"z": z}, {"z": gz}))

        # integer data with h=1: exact differences for this linear map
        x = rng.integers(-50, 50, btsm_shape(rng)).astype(np.float64)
        gy = rng.integers(-50, 50, x.shape).astype(np.float64)
        note("btsm", tn.grad_check(lambda: float(np.sum(gy * btsm_forward(x))), {"x": x},
                                   {"x": btsm_backward(gy)}, h=1.0, tol=1e-10))

        p = ssm_params(rng, 2, 3)
        X, G = rng.normal(size=(1, 1, 4, 2)), rng.normal(size=(1, 1, 4, 2))
        _, cache = ssm_block_forward(X, p)
        gX, grads = ssm_block_backward(G, cache)
        note("ssm_block", tn.grad_check(lambda: float(np.sum(G * ssm_block(X, p))),
                                        {"X": X, **p.as_dict()}, {"X": gX, **grads}))

        p = ssm_params(rng, 3, 4)
        x, gy = rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 6, 3))
        _, cache = selective_scan_forward(x, p)
        gx, grads = selective_scan_backward(gy, cache)
        note("ssm_scan", tn.grad_check(lambda: float(np.sum(gy * selective_scan(x, p))),
                                       {"x": x, **p.as_dict()}, {"x": gx, **grads}))

        m = build_model(ModelConfig(**TINY, seed=seed))
        # a step size near 1 keeps the A_log gradients above difference resolution
        m.params["ssm.b_delta"][...] = 0.0
        m.params["ssm.A_log"] += rng.normal(scale=0.3, size=m.params["ssm.A_log"].shape)
        x, labels = rng.random((2, 2, 2, 2, 8, 8)), rng.integers(0, 3, 2)
        _, _, grads = m.loss_and_grads(x, labels)
        note("tiny_model", tn.grad_check(
            lambda: tn.softmax_cross_entropy(m.logits(x), labels)[0],
            {**m.params, "input": x}, grads))
    return worst


def test_c05_gradient_suite():
    t0 = time.perf_counter()
    worst = _grad_suite()
    elapsed = time.perf_counter() - t0
    ok = all(v < (1e-10 if k == "btsm" else 1e-3) for k, v in worst.items())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(5, ok and len(worst) == 8 and elapsed < 120,
           f"10 seeds each, worst rel err: {detail}; {elapsed:.1f} s (< 120 s)")


def test_c09_linear_time_scan():
    rng = np.random.default_rng(109)
    p = SsmParams.init(32, 8, rng=rng)
    xs = {n: rng.normal(size=(n, 32)) for n in (2048, 4096)}
    times = {}
    for n, x in xs.items():
        selective_scan(x, p)  # warm-up
        times[n] = min(_timed(lambda: selective_scan(x, p)) for _ in range(11))
    ratio = times[4096] / times[2048]
    record(9, 1.6 <= ratio <= 2.6,
           f"t(4096)/t(2048) = {ratio:.2f} in [1.6, 2.6] "
           f"({times[2048] * 1e3:.1f} ms, {times[4096] * 1e3:.1f} ms)")


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


# -- 6, 7: LNES and losses ---------------------------------------------------


def test_c06_lnes_oracle():
    rng = np.random.default_rng(106)
    match = in_range = perm = 0
    for _ in range(100):
        n = int(rng.integers(0, 200))
        start, flen = int(rng.integers(0, 10**6)), int(rng.integers(1, 40_000))
        t = np.sort(rng.integers(start, start + flen, n))
        x, y, p = rng.integers(0, 12, n), rng.integers(0, 10, n), rng.choice([-1, 1], n)
        got = build_lnes(ev.EventStream.from_arrays(12, 10, t, x, y, p), start, flen)
        match += np.array_equal(got, lnes_replay(t, x, y, p, start, flen, 10, 12))
        in_range += bool(got.min() >= 0 and got.max() <= 1)
        o = rng.permutation(n)
        shuffled = ev.EventStream.from_arrays(12, 10, t[o], x[o], y[o], p[o], validate=False)
        perm += np.array_equal(build_lnes(shuffled, start, flen), got)
    record(6, match == in_range == perm == 100,
           f"100 frames: oracle {match}, in [0,1] {in_range}, permutation-invariant {perm}")


def test_c07_loss_identities():
    errs = []
    for C in (2, 4, 38):
        y = np.eye(C)[C - 1]
        errs.append(abs(tn.cross_entropy(np.full(C, 1.0 / C), y) - math.log(C)))
    rng = np.random.default_rng(107)
    gerr = 0.0
    for C in (2, 4, 38):
        z, labels = rng.normal(size=(6, C)), rng.integers(0, C, 6)
        _, p, g = tn.softmax_cross_entropy(z, labels)
        gerr = max(gerr, float(np.max(np.abs(g * len(z) - (p - np.eye(C)[labels])))))
    record(7, max(errs) < 1e-9 and gerr < 1e-9,
           f"|loss - ln C| max {max(errs):.1e}, |grad - (p - y)| max {gerr:.1e} (< 1e-9)")


# -- 10: round trips and determinism -----------------------------------------


def _toy(cfg, n, seed):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % cfg.num_classes
    vol = rng.random((n, cfg.T, cfg.Bn, 2, cfg.height, cfg.width))
    vol[np.arange(n), :, :, labels % 2] += 0.5
    return LabeledSet(vol, labels)


def test_c10_round_trips():
    rng = np.random.default_rng(110)
    io_ok = 0
    for _ in range(20):
        s = random_stream(rng, int(rng.integers(0, 300)))
        csv = ev.write_csv(s)
        binary = ev.write_binary(ev.read_csv(csv, s.width, s.height))
        back = ev.read_binary(binary)
        io_ok += (back == s and ev.write_csv(back) == csv and ev.write_binary(back) == binary)

    m = build_model(ModelConfig(seed=3))
    data = checkpoint_bytes(m)
    loaded = load_checkpoint(io.BytesIO(data))
    ckpt_ok = (checkpoint_bytes(loaded) == data
               and all(loaded.params[k].tobytes() == m.params[k].tobytes() for k in m.params))

    cfg = ModelConfig(**TINY)
    tc = TrainConfig(lr=1e-2, epochs=4, batch_size=2, seed=5)
    runs = []
    with threadpool_limits(limits=1):
        for _ in range(2):
            model = build_model(cfg)
            hist = train(model, _toy(cfg, 6, 0), tc, val=_toy(cfg, 3, 1))
            runs.append((hist, {k: v.tobytes() for k, v in model.params.items()}))
    det_ok = runs[0] == runs[1]
    record(10, io_ok == 20 and ckpt_ok and det_ok,
           f"CSV/binary round trips {io_ok}/20, checkpoint bit-exact {ckpt_ok}, "
           f"same-seed float64 logs and weights identical {det_ok}")


# -- 8, 11: synthetic corpus -------------------------------------------------


@pytest.fixture(scope="module")
def corpus():
    cfg = synth.SynthConfig()
    return cfg, synth.gen_dataset(cfg, ABLATION_PER_CLASS)


def test_c11_stats(corpus, tmp_path):
    cfg, samples = corpus
    report = stats.corpus_report(synth.write_corpus(cfg, samples, tmp_path), "subject")
    means: dict[str, list[float]] = {}
    for per_class in report["normalized_rates"]["class_means"].values():
        for name, v in per_class.items():
            means.setdefault(name, []).append(v)
    avg = {k: float(np.mean(v)) for k, v in means.items()}
    two = [avg[c] for c in synth.TWO_HANDED]
    one = {c: avg[c] for c in avg if c not in synth.TWO_HANDED}
    spread = report["rate_spread"]
    ok = min(two) > max(one.values()) and min(spread.values()) >= 2.0
    record(11, ok,
           f"mean normalized rate two-blob {min(two):.3f} > one-blob max {max(one.values()):.3f}; "
           f"per-subject spread min {min(spread.values()):.1f}x (>= 2x)")


@pytest.mark.slow
def test_c08_ablation_direction(corpus):
    t0 = time.perf_counter()
    _, samples = corpus
    sets = {sp: dataset.from_samples(samples, sp, 200_000, 6, 2) for sp in dataset.SPLITS}
    cfg = ModelConfig(T=2, Bn=6)
    with threadpool_limits(limits=1):
        table = ablate(cfg, sets["train"], sets["test"], TrainConfig(**ABLATION_TC),
                       seeds=(0, 1, 2), val_set=sets["val"])
    elapsed = time.perf_counter() - t0
    acc = {k: 100 * v["mean_accuracy"] for k, v in table.items()}
    ok = (acc["full"] - acc["baseline"] >= 10
          and all(acc["full"] >= acc[v] - 2 for v in ("+btsm", "+ssm"))
          and acc["full"] >= 90 and elapsed <= 1800)
    record(8, ok, ", ".join(f"{k} {v:.1f}%" for k, v in acc.items())
           + f"; {elapsed / 60:.1f} min (<= 30)")


# -- script mode -------------------------------------------------------------


def _main(argv) -> int:
    import tempfile
    from pathlib import Path

    tests = [test_c01_btsm_exactness, test_c02_btsm_zero_parameters,
             test_c03_permutation_invariants, test_c04_scan_oracle, test_c05_gradient_suite,
             test_c06_lnes_oracle, test_c07_loss_identities, test_c09_linear_time_scan,
             test_c10_round_trips]
    for fn in tests:
        try:
            fn()
        except AssertionError:
            pass
    cfg = synth.SynthConfig()
    data = (cfg, synth.gen_dataset(cfg, ABLATION_PER_CLASS))
    with tempfile.TemporaryDirectory() as d:
        for fn, args in ((test_c11_stats, (data, Path(d))), (test_c08_ablation_direction, (data,))):
            if fn is test_c08_ablation_direction and "--skip-slow" in argv:
                continue
            try:
                fn(*args)
            except AssertionError:
                pass
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return 0 if all(ok for ok, _ in ACCEPTANCE.values()) else 1


if __name__ == "__main__":
    sys.exit(_main(sys.argv[1:]))
