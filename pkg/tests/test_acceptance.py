"""Acceptance gate: one test per criterion, tolerances pinned.

Each test prints a single `criterion N: PASS ...` line on success so the
whole gate can be read off the test log. Criteria 7-9 train toy-scale
models on the bundled synthetic corpus; the full module runs in well under
the stated budgets on a commodity CPU.
"""

import json

import numpy as np
import pytest

from lossyad.bottleneck import FactorizedDensity, LatentCodec
from lossyad.cli import main
from lossyad.data import SynthConfig, build_training_corpus, synth_corpus
from lossyad.detection import ConfidenceStream, score_window
from lossyad.evaluate import evaluate_one_shot, stream_series
from lossyad.model import TcnAutoencoder, TcnConfig
from lossyad.numerics import RngState, Tensor, backward
from lossyad.training import LossWeights, TrainingConfig, fit, rdo_loss

from oracles import (confidence_oracle, detection_pipeline_oracle,
                     finite_diff_grad, max_rel_error)


def report(n, detail):
    print(f"criterion {n}: PASS — {detail}")


# ---------------------------------------------------------------------------
# Desk-scale experiment setup shared by criteria 7, 8, 9.

TREND_SYNTH = SynthConfig(
    channels=4, n_sets=8, length=1200, latent_components=2, noise_std=0.08,
    normal_prefix_fraction=0.55, anomaly_rate=0.3, level_shift_sigma=6.0,
    anomaly_types=("level_shift", "level_shift", "variance_burst"))
TREND_T = 100
TREND_LAMBDA = 100.0
TREND_EPOCHS = 30
TREND_SEEDS = (0, 1, 2)
TREND_GRID = np.arange(0.2, 12.0 + 1e-9, 0.1)


def trend_model_config(bottleneck, width=8):
    return TcnConfig(input_channels=4, window_length=TREND_T, blocks=3,
                     channel_width=width, latent_dim=8,
                     bottleneck_enabled=bottleneck)


def train_trend_cell(bottleneck, p, seed, width=8, epochs=TREND_EPOCHS):
    sets = synth_corpus(TREND_SYNTH, seed=1234)
    split = build_training_corpus(sets, p=p, seed=seed, window_length=TREND_T,
                                  stride=10, n_validation=2,
                                  min_anomalous_fraction=0.5)
    lam = TREND_LAMBDA if bottleneck else 0.0
    cfg = TrainingConfig(model=trend_model_config(bottleneck, width),
                         weights=LossWeights(lam, lam), learning_rate=1e-3,
                         batch_size=32, epochs=epochs, seed=seed)
    model, train_report = fit(split.train.windows, cfg)
    return model, split, train_report


@pytest.fixture(scope="module")
def trend_cells():
    """Train every (model kind, fraction, seed) cell once and reuse."""
    cells = {}
    for bottleneck in (True, False):
        for p in (0.0, 0.05):
            for seed in TREND_SEEDS:
                cells[(bottleneck, p, seed)] = train_trend_cell(
                    bottleneck, p, seed)
    return cells


# ---------------------------------------------------------------------------


def test_criterion_01_gradient_correctness(monkeypatch):
    """Analytic vs finite-difference gradients of the full training loss.

    Central differences are only valid away from activation kinks, so the
    test first asserts the chosen parameter point keeps every rectifier
    pre-activation at least 1e-3 from zero (h is 1e-5).
    """
    import lossyad.model as model_mod
    from lossyad.numerics import functional as nf

    cfg = TcnConfig(input_channels=2, window_length=16, blocks=2,
                    channel_width=4, latent_dim=8)
    model = TcnAutoencoder(cfg, seed=5)
    prng = np.random.default_rng(307)
    for p in model.parameters():
        p.data = p.data + prng.normal(0.0, 0.05, size=p.data.shape)
    x = prng.normal(size=(2, 16))
    noise = prng.uniform(-0.5, 0.5, size=8)
    weights = LossWeights(7.0, 3.0)

    def loss():
        x_hat, x_tilde, rate = model.forward_train_with_noise(x, noise)
        return rdo_loss(Tensor(x), x_hat, x_tilde, rate, weights)

    kink_margins = []
    real_relu = nf.relu

    def spy_relu(a):
        kink_margins.append(float(np.abs(a.data).min()))
        return real_relu(a)

    monkeypatch.setattr(model_mod.F, "relu", spy_relu)
    loss()
    monkeypatch.undo()
    margin = min(kink_margins)
    assert margin > 1e-3, f"point too close to a rectifier kink ({margin})"

    params = model.parameters()
    for p in params:
        p.zero_grad()
    backward(loss())
    worst = 0.0
    for p in params:
        numeric = finite_diff_grad(lambda: loss().item(), p.data, h=1e-5)
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, max_rel_error(analytic, numeric))
    assert worst < 1e-4, f"max relative gradient error {worst}"
    report(1, f"max relative gradient error {worst:.3e} < 1e-4 over "
              f"{sum(p.data.size for p in params)} parameters "
              f"(kink margin {margin:.2e})")


def test_criterion_02_causality():
    """Perturbations never reach encoder activations at earlier times."""
    cfg = TcnConfig(input_channels=3, window_length=40, blocks=3,
                    channel_width=6, latent_dim=16)
    model = TcnAutoencoder(cfg, seed=11)
    prng = np.random.default_rng(13)
    for p in model.parameters(include_density=False):
        p.data = p.data + prng.normal(0.0, 0.05, size=p.data.shape)
    rng = np.random.default_rng(17)
    violations = 0
    for _ in range(1000):
        x = rng.normal(size=(3, 40))
        t = int(rng.integers(0, 40))
        c = int(rng.integers(0, 3))
        base = model.encoder_stack(x).data
        xx = x.copy()
        xx[c, t] += float(rng.normal(0.0, 5.0))
        pert = model.encoder_stack(xx).data
        if not np.array_equal(base[:, :t], pert[:, :t]):
            violations += 1
    assert violations == 0
    report(2, "1000 seeded perturbation trials, zero early-time changes "
              "(bit-exact)")


def test_criterion_03_entropy_coder_consistency():
    """Actual coded length within 1% + 64 bytes of the analytic rate."""
    rng = RngState(23)
    density = FactorizedDensity(8, rng=rng)
    for p in density.parameters():
        p.data += rng.normal(0.0, 0.3, size=p.data.shape)
    codec = LatentCodec(density, np.full(8, -14), np.full(8, 14))
    support = np.arange(-14, 15)
    pmf, _ = density.integer_pmf(-14, 14)
    draw = np.random.default_rng(29)
    n_cols = 1500  # 12000 symbols
    batch = np.empty((8, n_cols), dtype=np.int64)
    for i in range(8):
        batch[i] = draw.choice(support, size=n_cols, p=pmf[i] / pmf[i].sum())
    estimated = density.rate_bits(Tensor(batch.astype(np.float64))).item()
    bitstream = codec.compress(batch)
    back = codec.decompress(bitstream)
    assert np.array_equal(back, batch.reshape(-1, order="F"))
    actual_bits = 8 * len(bitstream.to_bytes())
    assert actual_bits <= estimated * 1.01 + 64 * 8, \
        f"{actual_bits} bits vs estimate {estimated:.1f}"
    report(3, f"{batch.size} symbols: {actual_bits} coded bits vs "
              f"{estimated:.1f} estimated (x{actual_bits / estimated:.4f}); "
              f"round-trip exact")


def test_criterion_04_density_validity():
    """Monotone CDFs, floored likelihoods, bounded integer mass."""
    for seed, perturb in [(0, 0.0), (1, 0.5), (2, 1.5)]:
        rng = RngState(seed)
        d = FactorizedDensity(6, rng=rng)
        for p in d.parameters():
            p.data += rng.normal(0.0, perturb, size=p.data.shape)
        grid = np.linspace(-80.0, 80.0, 1000)
        cdf = d.cumulative_grid(np.broadcast_to(grid, (6, 1000)).copy()).data
        assert np.all(np.diff(cdf, axis=1) >= -1e-12)
        assert np.all(cdf >= 0.0) and np.all(cdf <= 1.0)
        ks = np.arange(-100, 101, dtype=np.float64)
        p_int = d.likelihood(Tensor(np.broadcast_to(ks, (6, ks.size)).copy())).data
        assert np.all(p_int >= d.likelihood_floor)
        assert np.all(p_int.sum(axis=1) <= 1.0 + 1e-6)
    report(4, "CDF monotone on 1000-point grids, likelihoods >= 1e-9, "
              "integer mass <= 1 + 1e-6 (3 parameter draws)")


def test_criterion_05_detection_oracle_equivalence():
    """Scoring pipeline and confidence stream match brute force."""
    rng = np.random.default_rng(31)
    for _ in range(100):
        c = int(rng.integers(1, 9))
        x = rng.normal(size=(c, 200))
        x_hat = x + rng.normal(0.0, rng.uniform(0.1, 2.0), size=(c, 200))
        omega = rng.uniform(0.2, 5.0, size=c)
        delta = float(rng.uniform(0.2, 3.0))
        series = score_window(x, x_hat, omega, delta)
        ae, mae, means, votes, per_time = detection_pipeline_oracle(
            x, x_hat, omega, delta)
        assert np.array_equal(series.scaled_err, ae)
        assert np.array_equal(series.max_err, mae)
        assert np.allclose(series.means, means, rtol=0, atol=1e-14)
        assert np.array_equal(series.votes, votes)
        assert np.array_equal(series.per_time_votes, per_time)
    for trial in range(100):
        t_win = int(rng.choice([20, 50, 200]))
        n_windows = int(rng.integers(1, 50))
        votes = rng.integers(0, 2, size=(n_windows, t_win))
        stream = ConfidenceStream(window_length=t_win)
        for v in votes:
            stream.push(v)
        expected = confidence_oracle(votes, stream.n_times, t_win)
        assert np.allclose(stream.confidence(), expected, rtol=0, atol=1e-15)
    report(5, "100 pipeline instances and 100 streaming instances match "
              "brute-force recomputation")


def test_criterion_06_loss_decomposition(trend_cells):
    """total == rate + l1*D1 + l2*D2 (1e-9); AE total == MSE exactly."""
    checked = 0
    for (bottleneck, p, seed), (_, _, train_report) in trend_cells.items():
        for e in train_report.epochs:
            if bottleneck:
                recomposed = (e.rate + TREND_LAMBDA * e.distortion
                              + TREND_LAMBDA * e.reconstruction)
                assert abs(e.total - recomposed) < 1e-9
                assert e.rate >= 0.0
            else:
                assert e.total == e.distortion
                assert e.rate == 0.0
            checked += 1
    assert checked > 0
    report(6, f"decomposition held for {checked} epochs across "
              f"{len(trend_cells)} training runs")


def test_criterion_07_robustness_trend(trend_cells):
    """AE degrades more than the rate-constrained model at 5% pollution."""
    means = {}
    for bottleneck in (True, False):
        for p in (0.0, 0.05):
            f1s = []
            for seed in TREND_SEEDS:
                model, split, _ = trend_cells[(bottleneck, p, seed)]
                rep, _ = evaluate_one_shot(model, split.validation,
                                           grid=TREND_GRID, stride=25)
                f1s.append(rep.best_f1)
            means[(bottleneck, p)] = float(np.mean(f1s))
    ae_drop = means[(False, 0.0)] - means[(False, 0.05)]
    rdo_drop = means[(True, 0.0)] - means[(True, 0.05)]
    assert ae_drop > rdo_drop, (
        f"AE drop {ae_drop:+.4f} must exceed RDO drop {rdo_drop:+.4f} "
        f"(means: {means})")
    report(7, f"mean best-F1 0%->5%: AE {means[(False, 0.0)]:.4f}->"
              f"{means[(False, 0.05)]:.4f} (drop {ae_drop:+.4f}), RDO "
              f"{means[(True, 0.0)]:.4f}->{means[(True, 0.05)]:.4f} "
              f"(drop {rdo_drop:+.4f}), 3 seeds each")


def test_criterion_08_multi_shot_gain(trend_cells):
    """Streaming confidence scoring beats 1-shot on the same checkpoint."""
    model, split, _ = trend_cells[(True, 0.0, 0)]
    rep, _ = evaluate_one_shot(model, split.validation, grid=TREND_GRID,
                               stride=25)
    gains = []
    for s in split.validation:
        result = stream_series(model, s, delta=rep.best_delta, cs_limit=0.85)
        gains.append((result.multi_shot_f1, result.one_shot_f1))
    assert all(ms >= os_ for ms, os_ in gains), gains
    report(8, "multi-shot F1 >= 1-shot F1 on every validation series: " +
              ", ".join(f"{ms:.4f}>={os_:.4f}" for ms, os_ in gains))


def test_criterion_09_capacity_rate_trend():
    """The wider model converges to an estimated rate <= the narrow one."""
    wide_rates, narrow_rates = [], []
    for seed in TREND_SEEDS:
        _, _, rep_wide = train_trend_cell(True, 0.05, seed, width=16,
                                          epochs=20)
        _, _, rep_narrow = train_trend_cell(True, 0.05, seed, width=4,
                                            epochs=20)
        wide_rates.append(rep_wide.epochs[-1].rate)
        narrow_rates.append(rep_narrow.epochs[-1].rate)
    assert np.mean(wide_rates) <= np.mean(narrow_rates), \
        f"wide {wide_rates} vs narrow {narrow_rates}"
    report(9, f"converged rate, mean of 3 seeds: wide "
              f"{np.mean(wide_rates):.2f} <= narrow "
              f"{np.mean(narrow_rates):.2f} bits")


def test_criterion_10_determinism(tmp_path):
    """CLI train twice: byte-identical checkpoints, identical metrics."""
    doc = {
        "model": {"input_channels": 3, "window_length": 50, "blocks": 2,
                  "channel_width": 6, "latent_dim": 8,
                  "bottleneck_enabled": True},
        "training": {"lambda1": 200.0, "lambda2": 200.0,
                     "learning_rate": 1e-3, "batch_size": 16, "epochs": 2,
                     "seed": 4},
        "data": {"source": "synth",
                 "synth": {"channels": 3, "n_sets": 5, "length": 400,
                           "latent_components": 2, "noise_std": 0.08,
                           "normal_prefix_fraction": 0.55,
                           "anomaly_rate": 0.3, "level_shift_sigma": 6.0},
                 "synth_seed": 7, "anomaly_fraction": 0.05, "split_seed": 1,
                 "n_validation": 2, "train_stride": 5},
        "detection": {"delta_grid": [0.2, 6.0, 0.2]},
        "output_dir": "",
    }
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        doc["output_dir"] = str(out)
        cfg = tmp_path / f"{run}.json"
        cfg.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg)]) == 0
        assert main(["eval", "--config", str(cfg), "--checkpoint",
                     str(out)]) == 0
        outputs.append(out)
    a, b = outputs
    assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()
    metrics_a = json.loads((a / "metrics.json").read_text())
    metrics_b = json.loads((b / "metrics.json").read_text())
    for key in ("best_f1", "best_delta", "tp", "fp", "fn", "per_set", "curve"):
        assert metrics_a[key] == metrics_b[key]
    report(10, "repeated train: checkpoints byte-identical, metrics equal "
               f"(best F1 {metrics_a['best_f1']:.4f})")
