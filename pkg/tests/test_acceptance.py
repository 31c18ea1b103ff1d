"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed
in the terminal summary (see ``conftest.py``).

The three training criteria run the default architecture on the frozen benchmark
set below and take most of the suite's runtime (tens of minutes on one core).
"""
import time

import numpy as np
import pytest

from phyulstm import (ModelConfig, OscillatorParams, PhyULSTM, TrainConfig, build_fd_matrix, evaluate_model,
                      generate_synthetic_dataset, load_checkpoint, predict, save_checkpoint, simulate_response,
                      split, train)
from phyulstm.autodiff import (BatchNormState, Grid3, activation, batch_norm1d, concat_channels, conv1d_causal,
                               crop_time, dense_timewise, max_pool1d, pad_time, parameter, total, upsample_repeat)
from phyulstm.differentiator import differentiate
from phyulstm.evaluation import pearson_r
from phyulstm.gradcheck import check_gradients
from phyulstm.losses import accel_only_loss, datadriven_loss, physics_loss
from phyulstm.lstm import DeepLstm, LstmCellParams, lstm_layer_forward
from phyulstm.training import _batch_loss
from phyulstm.unet import UNetParams, UNetPlan, decoder_block_forward, encoder_block_forward, unet_forward

from conftest import record

# Frozen benchmark: 50 records of 20 s at 20 Hz (401 steps).
BENCH_SEED = 2024
SPLIT_SEED = 2024
BENCH_KW = dict(intensity=0.8, f_band=(0.5, 1.0))

FULL_STATE_EPOCHS = 1000
ACCEL_ONLY_EPOCHS = 800
DATA_DRIVEN_EPOCHS = 800
LEARNING_RATE = 1e-3


def benchmark(n_train):
    ds = generate_synthetic_dataset(50, 20.0, 0.05, seed=BENCH_SEED, **BENCH_KW)
    return split(ds, n_train, seed=SPLIT_SEED)


def report(criterion, ok, detail, started):
    record(criterion, ok, f"{detail} [{time.perf_counter() - started:.1f} s]")
    assert ok, detail


# 1 -----------------------------------------------------------------------------------


def test_criterion_1_differentiator():
    t0 = time.perf_counter()
    worst = 0.0
    for n in (3, 11, 1001):
        dt = 0.05
        t = np.arange(n) * dt
        for coeffs in ((1.0, 0, 0), (0.5, -2.0, 0), (0.25, 1.5, -3.0)):
            c0, c1, c2 = coeffs
            u = c0 + c1 * t + c2 * t ** 2
            du = build_fd_matrix(n, dt).apply(u)
            worst = max(worst, np.max(np.abs(du - (c1 + 2 * c2 * t))))
    errs = []
    steps = [0.1 / 2 ** k for k in range(4)]
    for dt in steps:
        t = np.arange(0, 2 * np.pi + 1e-12, dt)
        errs.append(np.max(np.abs(build_fd_matrix(len(t), dt).apply(np.sin(t)) - np.cos(t))))
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    ok = worst <= 1e-10 and abs(slope - 2.0) <= 0.1
    report(1, ok, f"polynomial error {worst:.2e} (<= 1e-10), convergence slope {slope:.3f} (2.0 +- 0.1)", t0)


# 2 -----------------------------------------------------------------------------------


def _gradient_suite():
    rng = np.random.default_rng(0)
    out = {}

    def weighted(shape):
        w = Grid3(rng.normal(size=shape))
        return lambda y: total(y * w)

    x = parameter(rng.normal(size=(2, 6, 3)), "x")
    W, b = parameter(rng.normal(size=(2, 3, 4)), "W"), parameter(rng.normal(size=4), "b")
    f = weighted((2, 6, 4))
    out["conv1d_causal"] = check_gradients(lambda: f(conv1d_causal(x, W, b)), [x, W, b])
    gamma, beta = parameter(rng.uniform(0.5, 2, 3), "gamma"), parameter(rng.normal(size=3), "beta")
    f = weighted((2, 6, 3))
    for mode in ("train", "infer"):
        st = BatchNormState(3)
        st.mean[:], st.var[:] = rng.normal(size=3), rng.uniform(0.5, 2, 3)
        out[f"batch_norm1d[{mode}]"] = check_gradients(lambda: f(batch_norm1d(x, gamma, beta, st, mode)),
                                                       [x, gamma, beta])
    for kind in ("relu", "sigmoid", "tanh", "linear"):
        out[f"activation[{kind}]"] = check_gradients(lambda: f(activation(x, kind)), [x])
    f = weighted((2, 3, 3))
    out["max_pool1d"] = check_gradients(lambda: f(max_pool1d(x)), [x])
    f = weighted((2, 12, 3))
    out["upsample_repeat"] = check_gradients(lambda: f(upsample_repeat(x)), [x])
    y = parameter(rng.normal(size=(2, 6, 2)), "y")
    f = weighted((2, 6, 5))
    out["concat_channels"] = check_gradients(lambda: f(concat_channels(x, y)), [x, y])
    Wd, bd = parameter(rng.normal(size=(3, 2)), "Wd"), parameter(rng.normal(size=2), "bd")
    f = weighted((2, 6, 2))
    out["dense_timewise"] = check_gradients(lambda: f(dense_timewise(x, Wd, bd)), [x, Wd, bd])
    f = weighted((2, 6, 3))
    out["pad_crop"] = check_gradients(lambda: f(crop_time(pad_time(x, 3), 6)), [x])
    fd = build_fd_matrix(6, 0.1)
    out["differentiate"] = check_gradients(lambda: f(differentiate(x, fd)), [x])

    cell = LstmCellParams.init(3, 4, rng)
    f = weighted((2, 6, 4))
    out["lstm_layer"] = check_gradients(lambda: f(lstm_layer_forward(x, cell)), [x, *cell.arrays()])

    plan = UNetPlan((3, 4), 5)
    p = UNetParams.init(plan, rng)
    xe = parameter(rng.normal(size=(2, 8, 1)), "xe")
    enc = p.encoders[0]
    w1, w2 = Grid3(rng.normal(size=(2, 8, 3))), Grid3(rng.normal(size=(2, 4, 3)))

    def enc_loss():
        skip, pooled = encoder_block_forward(xe, enc, "train")
        return total(skip * w1) + total(pooled * w2)

    out["encoder_block"] = check_gradients(enc_loss, [xe, *_stage_arrays(enc)])
    xd = parameter(rng.normal(size=(2, 4, 5)), "xd")
    sk = parameter(rng.normal(size=(2, 8, 4)), "skip")
    dec = p.decoders[0]
    f = weighted((2, 8, 4))
    out["decoder_block"] = check_gradients(lambda: f(decoder_block_forward(xd, sk, dec, "train")),
                                           [xd, sk, *_stage_arrays(dec)])
    return out


def _stage_arrays(stage):
    return [*stage.first.named("a").values(), *stage.second.named("b").values()]


def _composite_errors():
    rng = np.random.default_rng(1)
    model = PhyULSTM(ModelConfig(UNetPlan((2, 3), 3), (3,), (3,)), seed=1)
    ag = rng.normal(size=(1, 16)) * 0.5
    meas = {ch: rng.normal(size=(1, 16)) for ch in ("x", "v", "g", "a")}
    fd = build_fd_matrix(16, 0.05)
    params = model.parameters()
    worst = {}
    for regime in ("full_state", "accel_only", "data_driven"):
        cfg = TrainConfig(regime=regime, epochs=1)
        labels = {k: meas[k] for k in ("x", "v", "g")} if regime == "full_state" else {"a": meas["a"]}
        errs = check_gradients(lambda: _batch_loss(model, ag, labels, fd, cfg, "train").total, params)
        worst[regime] = max(errs.values())
    return worst


def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    suite = {k: max(v.values()) for k, v in _gradient_suite().items()}
    composite = _composite_errors()
    worst_part = max(suite, key=suite.get)
    ok = max(suite.values()) < 1e-5 and max(composite.values()) < 1e-4
    report(2, ok, f"{len(suite)} components, worst {worst_part} {suite[worst_part]:.2e} (< 1e-5); "
                  f"composed loss worst {max(composite.values()):.2e} (< 1e-4)", t0)


# 3 -----------------------------------------------------------------------------------


def _free_vibration_error(dt):
    p = OscillatorParams(k2=0.0)
    n = int(round(10.0 / dt)) + 1
    traj = simulate_response(np.zeros(n), p, dt, x0=0.1)
    wn = np.sqrt(20.0)
    zeta = 1.0 / (2.0 * wn)
    wd = wn * np.sqrt(1 - zeta ** 2)
    t = traj.t
    exact = np.exp(-zeta * wn * t) * 0.1 * (np.cos(wd * t) + zeta * wn / wd * np.sin(wd * t))
    return np.max(np.abs(traj.x - exact))


def test_criterion_3_simulator():
    t0 = time.perf_counter()
    e1, e2 = _free_vibration_error(0.05), _free_vibration_error(0.025)
    ds = benchmark(10)
    identity = max(np.max(np.abs(r.a + r.g + r.ag)) for r in ds)
    ok = e1 < 1e-6 and 12 <= e1 / e2 <= 20 and identity <= 1e-12
    report(3, ok, f"free-vibration error {e1:.2e} (< 1e-6), halving ratio {e1 / e2:.2f} ([12, 20]), "
                  f"identity residual {identity:.1e} (<= 1e-12)", t0)


# 4 -----------------------------------------------------------------------------------


def test_criterion_4_physics_floor():
    t0 = time.perf_counter()
    ds = benchmark(10)
    fd = build_fd_matrix(401, 0.05)
    eq, case2, dd = [], [], []
    for r in ds:
        pred = Grid3(np.stack([r.x, r.v, r.g], axis=-1)[None])
        eq.append(float(physics_loss(pred, fd, r.ag[None])[0].data))
        case2.append(accel_only_loss(pred, r.a[None], fd, r.ag[None]).value)
        dd.append(datadriven_loss(Grid3(r.x[None, :, None]), r.a[None], fd).value)
    ok = max(eq) <= 1e-3 and max(case2) <= 1e-3
    report(4, ok, f"max over 50 records: physics {max(eq):.2e}, acceleration-only {max(case2):.2e} (<= 1e-3); "
                  f"data-driven {max(dd):.2e}", t0)


# 5-7 ---------------------------------------------------------------------------------


def _train(n_train, regime, epochs):
    ds = benchmark(n_train)
    cfg = TrainConfig(regime=regime, epochs=epochs, learning_rate=LEARNING_RATE, patience=epochs, seed=0)
    return ds, train(ds.records, cfg)


def test_criterion_5_full_state():
    t0 = time.perf_counter()
    ds, res = _train(10, "full_state", FULL_STATE_EPOCHS)
    s = evaluate_model(res.model, ds.by_split("test"), "full_state").summary("x")
    ok = s.n_valid == 40 and s.mean >= 0.90 and s.fraction_above >= 0.80
    report(5, ok, f"10 train / 40 test: mean r(x) {s.mean:.3f} (>= 0.90), share r > 0.9 {s.fraction_above:.3f} "
                  f"(>= 0.80), best epoch {res.best_epoch}", t0)


def test_criterion_6_acceleration_only():
    t0 = time.perf_counter()
    ds, res = _train(25, "accel_only", ACCEL_ONLY_EPOCHS)
    s = evaluate_model(res.model, ds.by_split("test"), "accel_only").summary("x")
    first = res.history[0]["physics_residual"]
    final = res.history[res.best_epoch - 1]["physics_residual"]
    ok = s.fraction_above >= 0.70 and final <= 0.1 * first
    report(6, ok, f"25 train / 25 test: share r(x) > 0.9 {s.fraction_above:.3f} (>= 0.70), "
                  f"physics residual {first:.3g} -> {final:.3g} (ratio {final / first:.3f}, <= 0.1)", t0)


def test_criterion_7_data_driven():
    t0 = time.perf_counter()
    ds, res = _train(10, "data_driven", DATA_DRIVEN_EPOCHS)
    held_out = ds.by_split("test")[:20]
    rs = evaluate_model(res.model, held_out, "data_driven").correlations("x")
    share = sum(r is not None and r > 0.8 for r in rs) / len(rs)
    ok = share >= 0.60
    report(7, ok, f"10 train / 20 held out: share r(x) > 0.8 {share:.3f} (>= 0.60)", t0)


# 8 -----------------------------------------------------------------------------------


def test_criterion_8_determinism_and_persistence(tmp_path):
    t0 = time.perf_counter()
    ds = benchmark(10)
    runs = [train(ds.records, TrainConfig(epochs=3, seed=11)) for _ in range(2)]
    logs = [np.array([[e[k] for k in sorted(e)] for e in r.history]) for r in runs]
    log_diff = float(np.max(np.abs(logs[0] - logs[1])))
    blobs = [save_checkpoint(tmp_path / f"{k}.ckpt", r.model).read_bytes() for k, r in enumerate(runs)]
    loaded = load_checkpoint(tmp_path / "0.ckpt")
    ag = ds.by_split("test")[0].ag
    before, after = predict(runs[0].model, ag), predict(loaded, ag)
    bitwise = all(getattr(before, ch).tobytes() == getattr(after, ch).tobytes() for ch in ("x", "v", "g", "a"))
    ok = log_diff <= 1e-12 and blobs[0] == blobs[1] and bitwise
    report(8, ok, f"epoch-log difference {log_diff:.1e} (<= 1e-12), checkpoints identical {blobs[0] == blobs[1]}, "
                  f"save/load/predict bitwise {bitwise}", t0)


# 9 -----------------------------------------------------------------------------------


def _block_causal(params, x, block):
    base = unet_forward(Grid3(x), params, "infer").data
    for s in range(x.shape[1]):
        pert = x.copy()
        pert[:, s] += 3.0
        out = unet_forward(Grid3(pert), params, "infer").data
        # outputs at t < block * floor(s / block) precede the perturbed block
        keep = block * (s // block)
        if not np.array_equal(out[:, :keep], base[:, :keep]):
            return False
    return True


def _lstm_causal(stack, x):
    base = stack.forward(Grid3(x)).data
    for s in range(x.shape[1]):
        pert = x.copy()
        pert[:, s] += 3.0
        if not np.array_equal(stack.forward(Grid3(pert)).data[:, :s], base[:, :s]):
            return False
    return True


def _pearson_properties(rng, trials=200):
    for _ in range(trials):
        n = int(rng.integers(3, 50))
        u, v = rng.normal(size=n), rng.normal(size=n)
        a, b = rng.uniform(0.1, 10) * rng.choice([-1, 1]), rng.normal()
        r = pearson_r(u, v)
        if not (-1 <= r <= 1 and abs(r - pearson_r(v, u)) < 1e-12
                and abs(pearson_r(a * u + b, v) - np.sign(a) * r) < 1e-9):
            return False
    return True


def test_criterion_9_structural_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    params = UNetParams.init(UNetPlan(), rng)
    for st in params.batch_norm_states().values():
        st.mean[:] = rng.normal(scale=0.1, size=st.mean.shape)
        st.var[:] = rng.uniform(0.5, 2.0, size=st.var.shape)
    block = params.plan.block
    unet_ok = _block_causal(params, rng.normal(size=(1, 21, 1)), block)
    lstm_ok = _lstm_causal(DeepLstm.init(3, (100, 100), (100,), 3, rng), rng.normal(size=(1, 16, 3)))
    pearson_ok = _pearson_properties(rng)
    ok = unet_ok and lstm_ok and pearson_ok
    report(9, ok, f"U-Net block causality (block {block}) {unet_ok}, LSTM strict causality {lstm_ok}, "
                  f"Pearson bounds/symmetry/affine invariance {pearson_ok}", t0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
