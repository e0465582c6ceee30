import json
import math

import numpy as np
import pytest
import torch

from laploss.data import ArrayPairs, AugmentationConfig, make_base_image, synth_exposure_pair
from laploss.losses import AdversarialVariant, LossWeights
from laploss.models import GeneratorSpec
from laploss.soap import SOAP
from laploss import trainer
from laploss.trainer import (
    TrainConfig,
    TrainingAborted,
    ablation_run,
    fit,
    flag_best_row,
    format_ablation_table,
    generator_loss_on_batch,
    init_state,
    load_training_checkpoint,
    save_training_checkpoint,
    train_step,
)


def toy_data(n=8, h=32, w=32, seed=0):
    evs = (-2.0, -1.0, 1.0, 2.0)
    inputs, targets = [], []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        base = make_base_image(rng, h, w)
        degraded, gt = synth_exposure_pair(base, evs[i % len(evs)], rng=rng)
        inputs.append(degraded)
        targets.append(gt)
    return ArrayPairs(inputs, targets)


def tiny_config(**kw):
    defaults = dict(
        generator_spec=GeneratorSpec(width=4, blocks_low=1, blocks_mid=1, blocks_top=1),
        loss_weights=LossWeights(),
        batch_size=2,
        steps=2,
        seed=0,
        disc_base_width=8,
        image_hw=(32, 32),
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def params_snapshot(module):
    return [p.detach().clone() for p in module.parameters()]


def params_equal(snapshot, module):
    return all(torch.equal(a, b) for a, b in zip(snapshot, module.parameters()))


class TestTrainStep:
    def test_zero_learning_rates_leave_weights_bit_identical(self):
        cfg = tiny_config(lr_generator=0.0, lr_discriminator=0.0)
        state = init_state(cfg)
        data = toy_data(4)
        g_before = params_snapshot(state.generator)
        d_before = params_snapshot(state.discriminators)
        train_step(state, (np.stack(data.inputs[:2]), np.stack(data.targets[:2])))
        assert params_equal(g_before, state.generator)
        assert params_equal(d_before, state.discriminators)

    def test_level_isolation_one_hot(self):
        for active in range(3):
            lambdas = [0.0, 0.0, 0.0]
            lambdas[active] = 1.0
            cfg = tiny_config(loss_weights=LossWeights(lambdas=tuple(lambdas)), steps=10)
            state = init_state(cfg)
            data = toy_data(4)
            before = [params_snapshot(d) for d in state.discriminators.discriminators]
            for step in range(3):
                batch = trainer._batch_for_step(data, cfg, step)
                train_step(state, batch)
            for level in range(3):
                same = params_equal(before[level], state.discriminators.discriminators[level])
                assert same == (level != active), (active, level)

    def test_detachment_between_players(self):
        # D lr 0: generator still learns, discriminators untouched
        cfg = tiny_config(lr_discriminator=0.0)
        state = init_state(cfg)
        data = toy_data(2)
        d_before = params_snapshot(state.discriminators)
        g_before = params_snapshot(state.generator)
        train_step(state, (np.stack(data.inputs), np.stack(data.targets)))
        assert params_equal(d_before, state.discriminators)
        assert not params_equal(g_before, state.generator)

    def test_loss_decreases_in_most_seeded_trials(self):
        wins = 0
        for seed in range(10):
            cfg = tiny_config(seed=seed)
            state = init_state(cfg)
            data = toy_data(2, seed=seed)
            batch = (np.stack(data.inputs), np.stack(data.targets))
            before = generator_loss_on_batch(state, batch)
            train_step(state, batch)
            after = generator_loss_on_batch(state, batch)
            wins += after < before
        assert wins >= 7, f"loss decreased in only {wins}/10 trials"

    def test_wgan_clipping(self):
        cfg = tiny_config(variant=AdversarialVariant.WGAN, wgan_clip=0.01)
        state = init_state(cfg)
        data = toy_data(2)
        train_step(state, (np.stack(data.inputs), np.stack(data.targets)))
        for i in range(3):
            for p in state.discriminators.discriminators[i].parameters():
                assert p.abs().max().item() <= 0.01 + 1e-12

    def test_nonfinite_loss_aborts_with_diagnostics(self, monkeypatch):
        cfg = tiny_config()
        state = init_state(cfg)
        data = toy_data(2)

        def poisoned(*args, **kwargs):
            total, breakdown = real_total(*args, **kwargs)
            return total * float("nan"), breakdown

        real_total = trainer.laploss_generator_total
        monkeypatch.setattr(trainer, "laploss_generator_total", poisoned)
        with pytest.raises(TrainingAborted) as err:
            train_step(state, (np.stack(data.inputs), np.stack(data.targets)))
        assert "levels" in err.value.diagnostics

    def test_breakdown_structure(self):
        cfg = tiny_config()
        state = init_state(cfg)
        data = toy_data(2)
        rec = train_step(state, (np.stack(data.inputs), np.stack(data.targets)))
        assert rec["step"] == 1
        assert len(rec["levels"]) == 3
        assert set(rec["d_losses"]) == {0, 1, 2}
        recomputed = sum(l["weighted"] for l in rec["levels"])
        assert rec["total"] == pytest.approx(recomputed, rel=1e-6)


class TestFit:
    def test_zero_steps_returns_initial_state(self):
        cfg = tiny_config(steps=0)
        data = toy_data(4)
        state, history = fit(cfg, data)
        assert state.step == 0
        assert history == []

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            fit(tiny_config(), ArrayPairs([], []))

    def test_writes_events_checkpoints_and_report(self, tmp_path):
        cfg = tiny_config(steps=4, checkpoint_interval=2, eval_interval=2)
        data = toy_data(4)
        state, history = fit(cfg, data, eval_data=toy_data(2, seed=9), out_dir=tmp_path)
        events = [json.loads(l) for l in (tmp_path / "events.jsonl").read_text().splitlines()]
        steps = [e for e in events if e["kind"] == "step"]
        evals = [e for e in events if e["kind"] == "eval"]
        assert len(steps) == 4 and len(evals) == 2
        assert (tmp_path / "checkpoints" / "step_000002").is_dir()
        assert (tmp_path / "checkpoints" / "final" / "generator.pt").is_file()
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["steps_completed"] == 4
        assert report["best"] is not None
        assert len(history) == 2

    def test_double_precision_trajectory_reproducible(self):
        torch.set_num_threads(1)
        cfg = tiny_config(steps=5, dtype="float64")
        data = toy_data(4)
        traj = []
        for _ in range(2):
            state = init_state(cfg)
            losses = []
            for step in range(cfg.steps):
                rec = train_step(state, trainer._batch_for_step(data, cfg, step))
                losses.append(rec["total"])
            traj.append(losses)
        assert traj[0] == traj[1]

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        torch.set_num_threads(1)
        cfg = tiny_config(steps=10, dtype="float64", checkpoint_interval=5)
        data = toy_data(6)
        _, _ = fit(cfg, data, out_dir=tmp_path / "full")
        full = [
            json.loads(l)
            for l in (tmp_path / "full" / "events.jsonl").read_text().splitlines()
        ]
        full_losses = {e["step"]: e["total"] for e in full if e["kind"] == "step"}

        resumed_state, _ = fit(
            cfg,
            data,
            out_dir=tmp_path / "resumed",
            resume_from=tmp_path / "full" / "checkpoints" / "step_000005",
        )
        resumed = [
            json.loads(l)
            for l in (tmp_path / "resumed" / "events.jsonl").read_text().splitlines()
        ]
        resumed_losses = {e["step"]: e["total"] for e in resumed if e["kind"] == "step"}
        assert sorted(resumed_losses) == [6, 7, 8, 9, 10]
        for step, loss in resumed_losses.items():
            assert loss == pytest.approx(full_losses[step], abs=1e-6)
        assert resumed_state.step == 10

    def test_resume_rejects_wrong_spec(self, tmp_path):
        cfg = tiny_config(steps=2, checkpoint_interval=2)
        fit(cfg, toy_data(4), out_dir=tmp_path)
        other = tiny_config(generator_spec=GeneratorSpec(width=8, blocks_low=1, blocks_mid=1, blocks_top=1))
        with pytest.raises(Exception):
            load_training_checkpoint(other, tmp_path / "checkpoints" / "final")

    def test_augmented_training_is_deterministic(self):
        cfg = tiny_config(steps=3, augment=AugmentationConfig(seed=4), dtype="float64")
        data = toy_data(4)
        runs = []
        for _ in range(2):
            state = init_state(cfg)
            losses = [
                train_step(state, trainer._batch_for_step(data, cfg, s))["total"]
                for s in range(cfg.steps)
            ]
            runs.append(losses)
        assert runs[0] == runs[1]

    def test_lambda_level_count_mismatch_rejected(self):
        cfg = tiny_config(loss_weights=LossWeights(lambdas=(1.0, 1.0)))
        with pytest.raises(ValueError):
            fit(cfg, toy_data(2))


class TestSOAP:
    def test_quadratic_descent(self):
        w = torch.nn.Parameter(torch.tensor([[2.0, -1.5], [0.5, 3.0]]))
        opt = SOAP([w], lr=0.1, precondition_frequency=2)
        losses = []
        for _ in range(50):
            opt.zero_grad()
            loss = (w ** 2).sum()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        assert losses[-1] < 0.05 * losses[0]

    def test_in_training_loop(self):
        cfg = tiny_config(optimizer_generator="soap", steps=3)
        state = init_state(cfg)
        data = toy_data(2)
        for step in range(3):
            rec = train_step(state, trainer._batch_for_step(data, cfg, step))
            assert math.isfinite(rec["total"])

    def test_bias_fallback_matches_shapes(self):
        lin = torch.nn.Linear(4, 3)
        opt = SOAP(lin.parameters(), lr=0.01)
        out = lin(torch.randn(5, 4)).sum()
        out.backward()
        opt.step()
        assert lin.bias.grad is not None


class TestAblation:
    def test_single_cell_grid(self):
        cfg = tiny_config(steps=1)
        rows = ablation_run(cfg, [(1 / 3, 1 / 3, 1 / 3)], toy_data(2), {"under": toy_data(2, seed=5)})
        assert len(rows) == 1
        assert rows[0]["levels"] == [0, 1, 2]
        assert "under" in rows[0]["psnr"]

    def test_six_row_grid(self):
        cfg = tiny_config(steps=1)
        grid = [
            (1.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, 1.0),
            (4 / 7, 2 / 7, 1 / 7),
            (1 / 7, 2 / 7, 4 / 7),
            (1 / 3, 1 / 3, 1 / 3),
        ]
        rows = ablation_run(cfg, grid, toy_data(2), {"under": toy_data(2, seed=5)})
        assert len(rows) == 6
        assert all("error" not in r for r in rows)
        assert format_ablation_table(rows).count("\n") == 6

    def test_cell_failure_does_not_abort_grid(self):
        cfg = tiny_config(steps=1)
        rows = ablation_run(cfg, [(1.0, 1.0), (1 / 3, 1 / 3, 1 / 3)], toy_data(2), {})
        assert "error" in rows[0]
        assert "error" not in rows[1]

    def test_equal_weights_flagged_best_on_published_numbers(self):
        table1 = [
            ([0], [1.0], (16.54, 16.97, 16.14, 16.09)),
            ([1], [1.0], (18.68, 17.74, 16.49, 16.31)),
            ([2], [1.0], (18.79, 18.94, 17.00, 16.79)),
            ([0, 1, 2], [4 / 7, 2 / 7, 1 / 7], (19.91, 18.79, 16.74, 16.63)),
            ([0, 1, 2], [1 / 7, 2 / 7, 4 / 7], (19.71, 18.87, 16.72, 16.57)),
            ([0, 1, 2], [1 / 3, 1 / 3, 1 / 3], (20.33, 18.96, 16.76, 16.64)),
        ]
        subsets = ("over", "under", "grad", "mix")
        rows = [
            {
                "levels": levels,
                "weights": weights,
                "psnr": dict(zip(subsets, psnrs)),
                "ssim": {s: 0.0 for s in subsets},
            }
            for levels, weights, psnrs in table1
        ]
        assert flag_best_row(rows) == 5
