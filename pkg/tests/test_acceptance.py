"""Acceptance criteria, one test per criterion.

Every test records a single PASS/FAIL line (shown in the terminal summary)
before asserting. Criteria 6 and 7 train on a 20-utterance synthetic corpus
and take several minutes each.
"""

import time

import numpy as np
import pytest

from atsunet import model_zoo as mz
from atsunet import nn_core as nn
from atsunet import pipeline as pl
from atsunet import quantization as q
from atsunet import training as tr
from atsunet.audio_io import AudioBuffer, frame_stream, read_wav, write_wav
from atsunet.dsp import (
    LogPowerFeatures,
    fft,
    hann_window,
    istft_bins,
    log_power,
    mel_filterbank,
    stft,
    stft_bins,
)
from atsunet.metrics import lsd, snr_db, spectral_snr

from conftest import record

CORPUS_SEED = 7
N_TRAIN = 20
N_TEST = 5
EPOCHS = 100
FINETUNE_EPOCHS = 50


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _fd(fn, arr, eps=1e-6):
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        up = fn()
        flat[k] = old - eps
        down = fn()
        flat[k] = old
        gflat[k] = (up - down) / (2 * eps)
    return g


# 1


def test_c01_dsp_correctness():
    cola_dev = 0.0
    for n in (512, 2048):
        w = hann_window(n)
        cola_dev = max(cola_dev, float(np.max(np.abs(w[: n // 2] + w[n // 2 :] - 1.0))))

    rng = np.random.default_rng(0)
    frame = rng.standard_normal(2048)
    rt = _rel(istft_bins(stft_bins(frame)), frame)

    x = rng.standard_normal(512) + 1j * rng.standard_normal(512)
    k = np.arange(512)
    naive = np.exp(-2j * np.pi * np.outer(k, k) / 512) @ x
    fft_err = _rel(fft(x), naive)

    ok = cola_dev == 0.0 and rt < 1e-6 and fft_err < 1e-9
    record(1, ok, f"cola max dev {cola_dev:.1e}, round trip {rt:.1e}, fft vs DFT {fft_err:.1e}")
    assert ok


# 2


def test_c02_shape_fidelity():
    frame = np.random.default_rng(1).standard_normal(2048)
    spec = stft(frame)
    f = log_power(spec)
    dc, rest = mz.split_dc(f.values)
    m = mz.build(mz.default_config("ats"))
    out = m.forward(rest[None])[0]
    back = mz.attach_dc(dc, mz.forward_features(m, LogPowerFeatures(rest, 0.0, 1.0)).values)
    shapes = (spec.bins.shape, rest.shape, out.shape, back.shape)
    ok = shapes == ((257, 9), (256, 9), (256, 9), (257, 9)) and np.array_equal(back[0], f.values[0])
    record(2, ok, f"spectrogram {shapes[0]}, net in {shapes[1]} out {shapes[2]}, reassembled {shapes[3]}, DC kept")
    assert ok


# 3


def test_c03_gradient_validity():
    rng = np.random.default_rng(2)
    errs = {}

    x = rng.standard_normal((2, 3, 8, 5))
    p = nn.ConvParams(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4))
    up = rng.standard_normal((2, 4, 8, 5))
    gx, (gw, gb) = nn.conv_backward(x, p, up)
    obj = lambda: np.sum(nn.conv(x, p) * up)
    errs["conv"] = max(_rel(gx, _fd(obj, x)), _rel(gw, _fd(obj, p.weight)), _rel(gb, _fd(obj, p.bias)))

    x = rng.standard_normal((2, 3, 8, 5))
    y, choice = nn.maxpool_f(x)
    up = rng.standard_normal(y.shape)
    errs["maxpool"] = _rel(nn.maxpool_f_backward(up, choice), _fd(lambda: np.sum(nn.maxpool_f(x)[0] * up), x))

    up = rng.standard_normal((2, 3, 16, 5))
    errs["upsample"] = _rel(nn.upsample_f_backward(up), _fd(lambda: np.sum(nn.upsample_f(x) * up), x))

    x = rng.standard_normal((2, 3, 8, 5)) + 0.05
    up = rng.standard_normal(x.shape)
    errs["relu"] = _rel(nn.relu_backward(x, up), _fd(lambda: np.sum(nn.relu(x) * up), x))

    x = rng.standard_normal((2, 8, 4, 5))
    up = rng.standard_normal(x.shape)
    errs["atsm"] = _rel(nn.atsm_backward(up, 0.5), _fd(lambda: np.sum(nn.atsm(x, 0.5) * up), x))

    a, b = rng.standard_normal((2, 2, 4, 5)), rng.standard_normal((2, 3, 4, 5))
    up = rng.standard_normal((2, 5, 4, 5))
    ga, gb2 = nn.concat_backward(up, 2)
    obj = lambda: np.sum(nn.concat_channels(a, b) * up)
    errs["concat"] = max(_rel(ga, _fd(obj, a)), _rel(gb2, _fd(obj, b)))

    y, t = rng.standard_normal((2, 257, 9)), rng.standard_normal((2, 257, 9))
    fb = mel_filterbank()
    _, g = tr.loss(y, t, fb)
    errs["loss"] = _rel(g, _fd(lambda: tr.loss(y, t, fb)[0], y))
    kernels_ok = max(errs.values()) < 1e-4

    # miniature network, composite loss
    rng = np.random.default_rng(3)
    clean = tr.synth_utterance(rng, 0.3)
    ds = tr.build_dataset([(tr.simulate_bcm(clean), clean)]).subset([1, 3])
    cfg = mz.ModelConfig("ats", (2, 2, 2, 2, 2), shift_fraction=1.0)
    m = mz.build(cfg, seed=4, dtype=np.float64)
    for cp in m.convs.values():
        cp.bias[...] = 0.05
    m.norm_mean, m.norm_std = ds.norm_mean, ds.norm_std
    objective = lambda: tr.batch_loss(m, ds.inputs, ds.input_dc, ds.targets, fb, backward=False)
    m.zero_grad()
    tr.batch_loss(m, ds.inputs, ds.input_dc, ds.targets, fb)
    analytic = np.concatenate([np.r_[cp.grad_weight.ravel(), cp.grad_bias.ravel()] for cp in m.convs.values()])
    numeric = np.concatenate([np.r_[_fd(objective, cp.weight).ravel(), _fd(objective, cp.bias).ravel()] for cp in m.convs.values()])
    net_err = _rel(analytic, numeric)

    ok = kernels_ok and net_err < 1e-3
    worst = max(errs, key=errs.get)
    record(3, ok, f"worst kernel {worst} {errs[worst]:.1e} (< 1e-4), miniature network {net_err:.1e} (< 1e-3)")
    assert ok


# 4


def test_c04_atsm_contract():
    rng = np.random.default_rng(4)
    ats = mz.build(mz.default_config("ats"))
    atsm_rows = [r for r in mz.layer_costs(ats) if r[1] == "atsm"]
    zero_cost = len(atsm_rows) == 10 and all(r[3] == 0 and r[4] == 0 for r in atsm_rows)

    reach = set()
    field_ok = True
    for trial in range(20):
        c, T = 8, 9
        x = rng.standard_normal((c, 16, T))
        p = nn.ConvParams(rng.standard_normal((3, c, 3, 1)), rng.standard_normal(3))
        base = nn.conv(nn.atsm(x, 0.5), p)
        t = int(rng.integers(1, T - 1))
        x2 = x.copy()
        x2[:, :, t] += rng.standard_normal((c, 16))
        changed = np.flatnonzero(np.any(nn.conv(nn.atsm(x2, 0.5), p) != base, axis=(0, 1)))
        field_ok &= set(changed) <= {t - 1, t, t + 1}
        reach |= {int(k) - t for k in changed}
    field_ok &= reach == {-1, 0, 1}

    one = mz.build(mz.default_config("1d"))
    parity = (mz.count_params(ats), mz.count_flops(ats)) == (mz.count_params(one), mz.count_flops(one))
    ok = zero_cost and field_ok and parity
    record(4, ok, f"atsm layers {len(atsm_rows)} at 0 params/0 flops, receptive offsets {sorted(reach)}, "
           f"ats = 1d: {mz.count_params(ats)} params / {mz.count_flops(ats)} flops")
    assert ok


# 5

TABLE = {"ats": 4500, "1d": 4500, "mixed": 6300, "hybrid": 8400, "2d_v1": 11800, "2d_v2": 187300}


def test_c05_cost_accounting():
    params, flops = {}, {}
    for v in TABLE:
        cfg = mz.default_config(v)
        params[v], flops[v] = mz.count_params(cfg), mz.count_flops(cfg)
    dev = {v: params[v] / TABLE[v] - 1 for v in TABLE}
    order = ["1d", "mixed", "hybrid", "2d_v1", "2d_v2"]
    strict = flops["ats"] == flops["1d"] and all(flops[a] < flops[b] for a, b in zip(order, order[1:]))
    ok = all(abs(d) <= 0.25 for d in dev.values()) and strict
    worst = max(dev, key=lambda v: abs(dev[v]))
    record(5, ok, "params " + ", ".join(f"{v} {params[v]}" for v in TABLE)
           + f"; worst deviation {worst} {dev[worst]:+.1%}; flop order strict: {strict}")
    assert ok


# 6 and 7 share the corpus and the trained model


def _corpus():
    rng = np.random.default_rng(CORPUS_SEED)
    clean = [tr.synth_utterance(rng) for _ in range(N_TRAIN)]
    test = [tr.synth_utterance(np.random.default_rng(1000 + i)) for i in range(N_TEST)]
    return [(tr.simulate_bcm(c), c) for c in clean], [(tr.simulate_bcm(c), c) for c in test]


def _mean_lsd(model, pairs):
    enhanced = np.mean([lsd(ref, pl.enhance(model, x)[0]) for x, ref in pairs])
    baseline = np.mean([lsd(ref, x) for x, ref in pairs])
    return float(enhanced), float(baseline)


@pytest.fixture(scope="module")
def trained():
    train_pairs, test_pairs = _corpus()
    ds = tr.build_dataset(train_pairs)
    t0 = time.perf_counter()
    model, history = tr.train(mz.build(mz.default_config("ats"), seed=0), ds, epochs=EPOCHS, batch=64, seed=0)
    return model, history, train_pairs, test_pairs, time.perf_counter() - t0


@pytest.mark.slow
def test_c06_learning_efficacy(trained):
    model, history, train_pairs, test_pairs, seconds = trained
    enh, base = _mean_lsd(model, train_pairs)
    enh_test, base_test = _mean_lsd(model, test_pairs)
    gain = 1 - enh / base
    ok = gain >= 0.15 and history[49] < history[0]
    record(6, ok, f"corpus LSD {enh:.3f} vs band-limited {base:.3f} ({gain:.1%} lower, need 15%); "
           f"held-out {enh_test:.3f} vs {base_test:.3f}; loss epoch1 {history[0]:.3f} epoch50 {history[49]:.3f}; "
           f"{seconds:.0f}s")
    assert ok


def _noisy(pairs, rng, noises):
    out = []
    for bcm, clean in pairs:
        noise = noises[rng.integers(len(noises))]
        out.append((tr.augment_noise(bcm, noise, rng, tr.sample_snr(rng)), clean))
    return out


@pytest.mark.slow
def test_c07_noise_transfer(trained):
    model, _, train_pairs, test_pairs, _ = trained
    rng = np.random.default_rng(11)
    noises = [tr.simulate_bcm(tr.colored_noise(rng, 4.0)) for _ in range(4)]
    noisy_train = _noisy(train_pairs, rng, noises)
    ds = tr.build_dataset(noisy_train, norm=(model.norm_mean, model.norm_std))
    t0 = time.perf_counter()
    tuned, _ = tr.train(model, ds, epochs=FINETUNE_EPOCHS, batch=64, seed=1)
    seconds = time.perf_counter() - t0

    eval_rng = np.random.default_rng(12)
    eval_noises = [tr.simulate_bcm(tr.colored_noise(eval_rng, 4.0)) for _ in range(4)]
    noisy_test = _noisy(test_pairs, eval_rng, eval_noises)
    before, _ = _mean_lsd(model, noisy_test)
    after, _ = _mean_lsd(tuned, noisy_test)
    ok = after < before
    record(7, ok, f"noisy held-out LSD vs clean: fine-tuned {after:.3f} < base {before:.3f}; "
           f"{FINETUNE_EPOCHS} fine-tune epochs in {seconds:.0f}s")
    assert ok


# 8


def test_c08_quantization():
    # hand-worked: e = 15 - ceil(log2 max|x|), q = floor(x * 2**e), clamped to int16
    cases = [
        ([0.75, -0.3, 0.1], 15, [24576, -9831, 3276]),
        ([3.0, -1.0], 13, [24576, -8192]),
        ([0.01], 21, [20971]),
        ([1.0, -1.0], 15, [32767, -32768]),  # +32768 clamps
    ]
    hand_ok = True
    for x, e, want in cases:
        got, e_got = q.quantize_array(np.array(x))
        hand_ok &= e_got == e and got.tolist() == want

    rng = np.random.default_rng(8)
    fwd = []
    for v in mz.VARIANTS:
        m = mz.build(mz.default_config(v), seed=3)
        qm = q.quantize_model(m, [rng.standard_normal((256, 9)) for _ in range(16)])
        fm = m.astype(np.float64)
        for _ in range(3):
            x = rng.standard_normal((256, 9))
            fwd.append(snr_db(fm.forward(x[None])[0], q.forward_quantized(qm, LogPowerFeatures(x, 0.0, 1.0)).values))

    # real frames: synthetic speech through the band-limiting model
    m = mz.build(mz.default_config("ats"), seed=5)
    calib_src = tr.simulate_bcm(tr.synth_utterance(np.random.default_rng(20)))
    grids = tr.utterance_logpower(calib_src)
    m.norm_mean, m.norm_std = float(grids.mean()), float(grids.std())
    qm = q.quantize_model(m, list(((grids - m.norm_mean) / m.norm_std)[:, 1:, :]))
    x = tr.simulate_bcm(tr.synth_utterance(np.random.default_rng(21)))
    pipe = spectral_snr(pl.enhance(m, x)[0], pl.enhance(qm, x)[0])

    ok = hand_ok and min(fwd) >= 40 and pipe >= 35
    record(8, ok, f"hand values {'match' if hand_ok else 'differ'}; forward SNR min {min(fwd):.1f} dB (>= 40); "
           f"pipeline SNR {pipe:.1f} dB (>= 35)")
    assert ok


# 9


def test_c09_real_time():
    m = mz.build(mz.default_config("ats"), seed=0)
    x = tr.simulate_bcm(tr.synth_utterance(np.random.default_rng(9), 10.0))
    _, rep = pl.enhance(m, x)
    ok = rep.mean_ms < pl.DEADLINE_MS
    record(9, ok, f"ats mean {rep.mean_ms:.2f} ms/frame, p95 {rep.p95_ms:.2f} ms, deadline 64 ms, "
           f"real-time factor {rep.real_time_factor:.4f}")
    assert ok


# 10


def test_c10_stream_batch_equivalence(tmp_path):
    def model():
        rng = np.random.default_rng(10)
        clean = tr.synth_utterance(rng, 0.5)
        ds = tr.build_dataset([(tr.simulate_bcm(clean), clean)])
        m, _ = tr.train(mz.build(mz.default_config("ats"), seed=10), ds, epochs=2, batch=8, seed=10)
        return m

    m1, m2 = model(), model()
    same_model = all(np.array_equal(m1.convs[k].weight, m2.convs[k].weight) for k in m1.convs)

    x = tr.simulate_bcm(tr.synth_utterance(np.random.default_rng(30), 2.0))
    src = tmp_path / "in.wav"
    write_wav(src, x)
    outs = []
    for i, m in enumerate((m1, m2)):
        pl.process_file(m, src, tmp_path / f"out{i}.wav")
        outs.append((tmp_path / f"out{i}.wav").read_bytes())

    x16 = read_wav(src)
    state = pl.StreamState(m1)
    frames = np.concatenate([pl.process_frame(state, f) for f in frame_stream(x16)])[: len(x16)]
    write_wav(tmp_path / "frames.wav", AudioBuffer(frames))
    bitwise = (tmp_path / "frames.wav").read_bytes() == outs[0]
    batch_equal = np.array_equal(pl.enhance(m1, x16)[0].samples, frames)

    ok = same_model and outs[0] == outs[1] and bitwise and batch_equal
    record(10, ok, f"process_file == concatenated process_frame: {bitwise}; float buffers equal: {batch_equal}; "
           f"repeat run identical: {same_model and outs[0] == outs[1]}")
    assert ok
