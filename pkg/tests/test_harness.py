import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from delaylearn import NetworkConfig, RunConfig, init_params
from delaylearn.config import ConfigError
from delaylearn.data import DenseSample, synth_coincidence
from delaylearn.harness import (CheckpointError, ablation_conditions, checkpoint_load, checkpoint_save,
                                confidence_interval, delay_histogram, evaluate, run_ablation, train)
from delaylearn.online import Adam, TrainingError

from .conftest import spikes


def random_data(n, T=20, n_in=6, n_classes=3, seed=0):
    rng = np.random.default_rng(seed)
    return [DenseSample(spikes((T, n_in), 0.3, seed * 1000 + i), int(rng.integers(n_classes))) for i in range(n)]


def small_run(**kw):
    base = dict(n_in=6, n_hidden=8, n_out=3, d_max=9, w_scale=3.0, lr_w=1e-2, lr_d=0.5)
    net_keys = set(NetworkConfig.__dataclass_fields__)
    net = NetworkConfig(**{**base, **{k: v for k, v in kw.items() if k in net_keys}})
    run_kw = {"epochs": 2, "batch_size": 4, **{k: v for k, v in kw.items() if k not in net_keys}}
    return RunConfig(net=net, **run_kw)


def assert_params_equal(a, b):
    for name, arr in a.arrays().items():
        assert_array_equal(getattr(b, name), arr, err_msg=name)


class TestTrain:
    def test_zero_epochs(self):
        run = small_run(epochs=0)
        init = init_params(run.net, seed=0)
        params, metrics = train(run, random_data(8), params=init)
        assert_params_equal(params, init)
        assert metrics.epochs == []

    def test_metrics_and_bounds(self):
        run = small_run(epochs=3)
        _, metrics = train(run, random_data(12), random_data(6, seed=1))
        assert [m.epoch for m in metrics.epochs] == [0, 1, 2]
        half = run.net.d_half
        for m in metrics.epochs:
            assert 0.0 <= m.train_acc <= 1.0 and 0.0 <= m.test_acc <= 1.0
            assert -half <= m.delay_min <= m.delay_max <= half

    @pytest.mark.parametrize("engine", ["stream", "batched"])
    def test_seed_determinism(self, engine):
        run = small_run(engine=engine, optimizer="adam")
        data = random_data(10)
        pa, ma = train(run, data, data)
        pb, mb = train(run, data, data)
        assert_params_equal(pa, pb)
        strip = lambda ms: [(m.train_loss, m.train_acc, m.test_loss, m.test_acc) for m in ms.epochs]  # noqa: E731
        assert strip(ma) == strip(mb)

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        run = small_run(epochs=4, optimizer="adam")
        data = random_data(10)
        full, full_metrics = train(run, data)
        train(run.replace(epochs=2), data, checkpoint_path=tmp_path / "c.ckpt")
        ckpt = checkpoint_load(tmp_path / "c.ckpt", run)
        assert ckpt.epoch == 2
        resumed, metrics = train(run, data, resume=ckpt)
        assert_params_equal(full, resumed)
        assert [m.train_loss for m in metrics.epochs] == [m.train_loss for m in full_metrics.epochs]

    def test_non_finite_loss_keeps_last_checkpoint(self, tmp_path):
        run = small_run(epochs=1)
        path = tmp_path / "c.ckpt"
        train(run, random_data(8), checkpoint_path=path)
        before = path.read_bytes()
        bad = random_data(8)
        bad[3].frames[2, 1] = np.nan
        with pytest.raises(TrainingError, match="non-finite"):
            train(run.replace(epochs=3), bad, resume=checkpoint_load(path), checkpoint_path=path)
        assert path.read_bytes() == before

    def test_frozen_delays(self):
        run = small_run(lr_d=0.0, optimizer="adam")
        init = init_params(run.net, seed=0)
        params, metrics = train(run, random_data(8), params=init)
        assert_array_equal(params.d_in, init.d_in)
        assert metrics.delay_hist == delay_histogram(init, run.net)
        assert not np.array_equal(params.w_in, init.w_in)

    def test_learn_flags(self):
        run = small_run(learn_weights=False)
        init = init_params(run.net, seed=0)
        params, _ = train(run, random_data(8), params=init)
        assert_array_equal(params.w_in, init.w_in)
        assert not np.array_equal(params.d_in, init.d_in)

    @given(st.integers(0, 50))
    def test_delay_histogram_within_clamp(self, seed):
        run = small_run(epochs=1, lr_d=50.0, seed=seed)
        params, metrics = train(run, random_data(4, T=12, seed=seed))
        half = run.net.d_half
        assert np.abs(params.d_in).max() <= half
        assert sum(metrics.delay_hist["d_in"]) == params.d_in.size
        assert len(metrics.delay_hist["d_in"]) == run.net.d_max


class TestEvaluate:
    def test_random_twenty_class_net_is_at_chance(self):
        cfg = NetworkConfig(n_in=10, n_hidden=16, n_out=20, d_max=9)
        data = random_data(400, T=15, n_in=10, n_classes=20, seed=3)
        acc = evaluate(init_params(cfg, seed=0), data, cfg)
        assert 0.0 <= acc <= 0.12

    def test_forced_correct_readout(self):
        cfg = NetworkConfig(n_in=2, n_hidden=2, n_out=4, delay_in="none")
        params = init_params(cfg, seed=0)
        params.w_in[:] = 2.0
        params.w_out[:] = -1.0
        params.w_out[2] = 1.0
        sample = DenseSample(np.ones((5, 2)), 2)
        assert evaluate(params, [sample], cfg) == 1.0

    def test_deterministic(self, small_cfg, small_params):
        data = random_data(30)
        assert evaluate(small_params, data, small_cfg) == evaluate(small_params, data, small_cfg)

    def test_empty(self, small_cfg, small_params):
        assert math.isnan(evaluate(small_params, [], small_cfg))


class TestConfidenceInterval:
    def test_five_values(self):
        mean, half = confidence_interval([1, 2, 3, 4, 5])
        assert mean == 3.0 and half == pytest.approx(1.963, abs=1e-3)

    def test_two_values(self):
        mean, half = confidence_interval([0, 1])
        assert mean == 0.5 and half == pytest.approx(6.353, abs=1e-3)

    def test_equal_values(self):
        assert confidence_interval([0.7] * 4)[1] == 0.0

    @pytest.mark.parametrize("values", [[], [0.5]])
    def test_too_few(self, values):
        with pytest.raises(ValueError):
            confidence_interval(values)


class TestAblations:
    def test_delay_placement_grid(self):
        conds = ablation_conditions("delay_placement", RunConfig())
        assert set(conds) == {f"{p}_{m}" for p in ("input", "recurrent", "both") for m in ("synaptic", "axonal")}

    def test_sparsity_grid(self):
        conds = ablation_conditions("sparsity_sweep", RunConfig(), densities=(1.0, 0.2))
        assert conds["synaptic_density0.2"] == {"delay_in": "synaptic", "sparsity": 0.8}
        assert len(conds) == 4

    def test_every_condition_is_a_valid_config(self):
        for protocol in ("sparsity_sweep", "fixed_vs_learnable", "delay_placement", "weights_only_width"):
            for overrides in ablation_conditions(protocol, RunConfig()).values():
                RunConfig().replace(**overrides)

    def test_unknown_protocol(self):
        with pytest.raises(ConfigError):
            ablation_conditions("everything", RunConfig())

    def test_run_and_csv(self, tmp_path):
        base = small_run(epochs=1)
        res = run_ablation("fixed_vs_learnable", base, random_data(8), random_data(6, seed=2), seeds=[0, 1])
        assert len(res.rows) == 6
        res.to_csv(tmp_path / "a.csv")
        res.summary_csv(tmp_path / "s.csv")
        with open(tmp_path / "a.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["protocol", "condition", "seed", "accuracy"]
        summary = res.summary()
        assert [s["condition"] for s in summary] == ["learnable", "fixed_random", "fixed_zero"]
        assert all(s["n"] == 2 and np.isfinite(s["ci"]) for s in summary)

    def test_learnable_beats_fixed_on_coincidence_task(self, tmp_path):
        train_m = synth_coincidence(100, 5, 60, 0, tmp_path)
        test_m = synth_coincidence(50, 5, 60, 1, tmp_path, split="test")
        net = NetworkConfig(n_in=2, n_hidden=4, n_out=2, d_max=25, tau_m=5.0, w_scale=2.0,
                            delay_init="zero", optimizer="adam", lr_w=1e-2, lr_d=0.1)
        base = RunConfig(net=net, epochs=30, bin_factor=1)
        res = run_ablation("fixed_vs_learnable", base, train_m, test_m, seeds=[0])
        acc = {r["condition"]: r["accuracy"] for r in res.rows}
        assert acc["learnable"] >= acc["fixed_zero"]
        assert acc["learnable"] >= acc["fixed_random"]


class TestCheckpoint:
    def run_and_params(self, **kw):
        run = small_run(**kw)
        return run, init_params(run.net, seed=3)

    def test_round_trip_bit_identical(self, tmp_path):
        run, params = self.run_and_params(optimizer="adam", recurrent=True, delay_rec="axonal")
        opt = Adam()
        opt.step("w_in", params.w_in, np.ones_like(params.w_in), 0.1)
        checkpoint_save(tmp_path / "c.ckpt", params, run, opt, epoch=7)
        ckpt = checkpoint_load(tmp_path / "c.ckpt")
        assert_params_equal(params, ckpt.params)
        assert ckpt.run == run and ckpt.epoch == 7
        for key, arr in opt.state_arrays().items():
            assert_array_equal(ckpt.optimizer_state[key], arr)

    def test_mismatched_config(self, tmp_path):
        run, params = self.run_and_params()
        checkpoint_save(tmp_path / "c.ckpt", params, run)
        with pytest.raises(CheckpointError, match="w_in: expected shape"):
            checkpoint_load(tmp_path / "c.ckpt", run.replace(n_hidden=5))

    def test_version_mismatch(self, tmp_path):
        run, params = self.run_and_params()
        checkpoint_save(tmp_path / "c.ckpt", params, run)
        blob = bytearray((tmp_path / "c.ckpt").read_bytes())
        blob[8:10] = (2).to_bytes(2, "little")
        (tmp_path / "c.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version 2"):
            checkpoint_load(tmp_path / "c.ckpt")

    @pytest.mark.parametrize("damage", ["magic", "truncate", "header"])
    def test_corrupt(self, tmp_path, damage):
        run, params = self.run_and_params()
        checkpoint_save(tmp_path / "c.ckpt", params, run)
        blob = bytearray((tmp_path / "c.ckpt").read_bytes())
        if damage == "magic":
            blob[0] = ord("X")
        elif damage == "truncate":
            blob = blob[:-16]
        else:
            blob[20] = 0xFF
        (tmp_path / "c.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            checkpoint_load(tmp_path / "c.ckpt")
