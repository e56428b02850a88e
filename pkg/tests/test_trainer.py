"""Callback step semantics (hand-traced) and the training loop end to end."""

import math
import os

import numpy as np
import pytest

from sprout.dataset import BatchLoader, Manifest, scan_dataset
from sprout.errors import DatasetError, NumericError
from sprout.model import build_model
from sprout.optim import l2_penalty
from sprout.trainer import (CallbackState, HistoryRow, TrainConfig,
                            collect_predictions, early_stopping_step, evaluate,
                            model_checkpoint_step, reduce_lr_on_plateau_step,
                            run_training, write_history_csv)


def fresh_state(lr=0.001, min_delta=0.0):
    return CallbackState(current_lr=lr, min_delta=min_delta)


class TestCheckpointStep:
    def test_save_on_strict_improvement_only(self):
        state = fresh_state()
        saves = [model_checkpoint_step(state, v) for v in (1.0, 0.9, 0.95)]
        assert saves == [True, True, False]
        assert state.best_epoch == 2
        assert state.best_val_loss == 0.9

    def test_equal_loss_does_not_save(self):
        state = fresh_state()
        assert [model_checkpoint_step(state, v) for v in (1.0, 1.0)] == [True, False]
        assert state.best_epoch == 1

    def test_min_delta_requires_margin(self):
        state = fresh_state(min_delta=0.1)
        assert model_checkpoint_step(state, 1.0)
        assert not model_checkpoint_step(state, 0.95)   # short of 0.9
        assert model_checkpoint_step(state, 0.85)
        assert state.best_epoch == 3

    def test_snapshot_taken_at_best(self):
        state = fresh_state()
        for epoch, v in enumerate((1.0, 0.8, 0.9), start=1):
            model_checkpoint_step(state, v, weights={"w": np.array([epoch])})
        np.testing.assert_array_equal(state.best_weights["w"], [2])

    def test_lazy_weights_called_only_on_improvement(self):
        state = fresh_state()
        calls = []

        def snap():
            calls.append(state.epoch)
            return {"w": np.zeros(1)}

        for v in (1.0, 1.2, 0.9, 0.95):
            model_checkpoint_step(state, v, weights=snap)
        assert calls == [1, 3]

    def test_save_fn_failure_warns_and_returns_false(self, capsys):
        state = fresh_state()

        def boom():
            raise OSError("disk full")

        saved = model_checkpoint_step(state, 1.0, weights={"w": np.ones(1)},
                                      save_fn=boom)
        assert not saved
        assert state.best_weights is not None     # in-memory copy survives
        assert "disk full" in capsys.readouterr().err


class TestReduceLrStep:
    def test_halving_trace(self):
        # flat losses after one improvement: halve after epochs 6 and 11
        state = fresh_state()
        lrs = [reduce_lr_on_plateau_step(state, 1.0) for _ in range(12)]
        assert lrs == [0.001] * 5 + [0.0005] * 5 + [0.00025] * 2

    def test_counter_resets_on_improvement(self):
        state = fresh_state()
        for v in (1.0, 1.0, 1.0, 1.0, 0.9):     # counter reaches 3 then clears
            lr = reduce_lr_on_plateau_step(state, v)
        assert lr == 0.001
        for v in (0.9, 0.9, 0.9, 0.9, 0.9):     # five flat epochs now halve
            lr = reduce_lr_on_plateau_step(state, v)
        assert lr == 0.0005

    def test_floor_is_exact(self):
        state = fresh_state(lr=2e-6)
        reduce_lr_on_plateau_step(state, 1.0, patience=1)
        lr = reduce_lr_on_plateau_step(state, 1.0, patience=1)
        assert lr == 1e-6
        lr = reduce_lr_on_plateau_step(state, 1.0, patience=1)
        assert lr == 1e-6

    def test_custom_factor(self):
        state = fresh_state()
        reduce_lr_on_plateau_step(state, 1.0, factor=0.1, patience=1)
        lr = reduce_lr_on_plateau_step(state, 1.0, factor=0.1, patience=1)
        assert lr == pytest.approx(0.0001)


class TestEarlyStoppingStep:
    def test_stops_after_patience_flat_epochs(self):
        state = fresh_state()
        losses = [1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7] + [0.7] * 10
        stops = [early_stopping_step(state, v) for v in losses]
        assert stops == [False] * 16 + [True]
        assert state.stopped

    def test_own_snapshot_tracking(self):
        state = fresh_state()
        epoch_weights = iter(range(1, 20))
        for v in (1.0, 0.9, 0.95, 0.99):
            early_stopping_step(state, v,
                                weights={"w": np.array([next(epoch_weights)])})
        np.testing.assert_array_equal(state.best_weights["w"], [2])

    def test_improvement_resets_counter(self):
        state = fresh_state()
        for v in [1.0] + [1.1] * 9:
            assert not early_stopping_step(state, v, patience=10)
        assert not early_stopping_step(state, 0.9, patience=10)
        for v in [1.1] * 9:
            assert not early_stopping_step(state, v, patience=10)
        assert early_stopping_step(state, 1.1, patience=10)


class TestCombinedCallbacks:
    def run_schedule(self, losses):
        state = fresh_state()
        saved, lrs, stop_epoch = [], [], None
        for epoch, v in enumerate(losses, start=1):
            if model_checkpoint_step(state, v, weights={"w": np.array([epoch])}):
                saved.append(epoch)
            lrs.append(reduce_lr_on_plateau_step(state, v))
            if early_stopping_step(state, v):
                stop_epoch = epoch
                break
        return state, saved, lrs, stop_epoch

    def test_shared_state_shadows_agree(self):
        losses = [1.0, 0.9, 0.92, 0.88] + [0.9] * 12
        state, saved, lrs, stop_epoch = self.run_schedule(losses)
        assert state.best_val_loss == state.lr_best == state.es_best == 0.88
        assert saved == [1, 2, 4]
        assert stop_epoch == 14
        assert stop_epoch - state.best_epoch == 10
        np.testing.assert_array_equal(state.best_weights["w"], [4])

    def test_lr_halves_while_waiting_for_stop(self):
        losses = [1.0] + [1.0] * 10
        state, saved, lrs, stop_epoch = self.run_schedule(losses)
        # counters run in parallel: halvings at epochs 6 and 11, stop at 11
        assert lrs[5] == 0.0005
        assert lrs[10] == 0.00025
        assert stop_epoch == 11

    def test_monotone_improvement_never_stops(self):
        losses = [1.0 / (1 + e) for e in range(25)]
        state, saved, lrs, stop_epoch = self.run_schedule(losses)
        assert stop_epoch is None
        assert saved == list(range(1, 26))
        assert set(lrs) == {0.001}
        assert state.best_epoch == 25


class TestHistoryCsv:
    def test_format(self, tmp_path):
        path = str(tmp_path / "history.csv")
        write_history_csv([HistoryRow(1, 0.5, 0.25, 1.0, 0.1, 0.0005),
                           HistoryRow(2, 0.25, 0.5, 0.75, 0.2, 1e-6)], path)
        lines = open(path).read().splitlines()
        assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc,lr"
        assert lines[1] == "1,0.500000,0.250000,1.000000,0.100000,0.0005"
        assert lines[2] == "2,0.250000,0.500000,0.750000,0.200000,1e-06"


@pytest.fixture
def tiny_setup(image_tree):
    root, _ = image_tree
    manifest = scan_dataset(root)
    model = build_model(alpha=0.25, input_size=32, num_classes=3,
                        freeze_n=80, seed=3)
    train_loader = BatchLoader(manifest, 12, image_size=32, shuffle=True, seed=5)
    val_loader = BatchLoader(manifest, 12, image_size=32)
    return model, train_loader, val_loader


class TestEvaluate:
    def test_loss_and_accuracy_ranges(self, tiny_setup):
        model, _, val_loader = tiny_setup
        loss, acc = evaluate(model, val_loader)
        assert math.isfinite(loss) and loss > 0
        assert 0.0 <= acc <= 1.0

    def test_lambda_adds_exact_penalty(self, tiny_setup):
        model, _, val_loader = tiny_setup
        plain, _ = evaluate(model, val_loader, 0.0)
        with_l2, _ = evaluate(model, val_loader, 0.01)
        penalty = l2_penalty(model, 0.01, accumulate=False)
        assert with_l2 - plain == pytest.approx(penalty, rel=1e-9)

    def test_empty_loader_rejected(self, tiny_setup):
        model, _, _ = tiny_setup

        class EmptyLoader:
            def epoch(self, epoch=0):
                return iter(())

        with pytest.raises(ValueError, match="empty"):
            evaluate(model, EmptyLoader())
        with pytest.raises(DatasetError, match="empty"):
            BatchLoader(Manifest([], ["a"], "/none"), 4, image_size=32)

    def test_collect_predictions_aligns_with_manifest(self, tiny_setup):
        model, _, val_loader = tiny_setup
        y_true, y_pred = collect_predictions(model, val_loader)
        assert len(y_true) == len(y_pred) == 36
        expected = [ci for _, ci in val_loader.manifest.entries]
        assert y_true.tolist() == expected
        assert set(y_pred.tolist()) <= {0, 1, 2}


class TestRunTraining:
    def test_history_and_artifacts(self, tiny_setup, tmp_path):
        model, train_loader, val_loader = tiny_setup
        config = TrainConfig(epochs=3, batch_size=12, image_size=32, seed=3)
        logs = []
        saved_epochs = []

        def save_fn(m, opt, state):
            saved_epochs.append(state.epoch)

        out = str(tmp_path / "out")
        os.makedirs(out)
        model, history = run_training(model, train_loader, val_loader, config,
                                      out_dir=out, save_fn=save_fn,
                                      log=logs.append)
        assert [r.epoch for r in history] == [1, 2, 3]
        assert all(r.lr == 0.001 for r in history)   # no plateau in 3 epochs
        assert len(logs) == 3
        assert "epoch 1/3" in logs[0] and "val_loss" in logs[0]

        # saves happen exactly at strict running-min epochs
        best = math.inf
        expect_saves = []
        for r in history:
            if r.val_loss < best:
                best = r.val_loss
                expect_saves.append(r.epoch)
        assert saved_epochs == expect_saves

        lines = open(os.path.join(out, "history.csv")).read().splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("epoch,")

    def test_loss_decreases_on_tiny_problem(self, tiny_setup):
        model, train_loader, val_loader = tiny_setup
        config = TrainConfig(epochs=4, batch_size=12, image_size=32, seed=3)
        _, history = run_training(model, train_loader, val_loader, config,
                                  log=lambda *_: None)
        assert history[-1].train_loss < history[0].train_loss

    def test_nonfinite_abort_names_location(self, tiny_setup, tmp_path):
        model, train_loader, val_loader = tiny_setup
        model.param_tensors()["head.out.kernel"].data[:] = np.nan
        config = TrainConfig(epochs=2, batch_size=12, image_size=32)
        out = str(tmp_path)
        with pytest.raises(NumericError, match="epoch 1"):
            run_training(model, train_loader, val_loader, config, out_dir=out,
                         log=lambda *_: None)
        # the history file still lands (header only; no epoch completed)
        lines = open(os.path.join(out, "history.csv")).read().splitlines()
        assert lines == ["epoch,train_loss,train_acc,val_loss,val_acc,lr"]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(initial_lr=0.0)
