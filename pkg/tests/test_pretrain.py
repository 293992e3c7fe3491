import math

import numpy as np
import pytest

from latentworld import autodiff as ad
from latentworld import pretrain as pt
from latentworld.encoder import EncoderConfig
from latentworld.errors import ConfigError, ContractError
from latentworld.masking import MaskSpec, sample_multiblock_mask
from latentworld.optim import LrSchedule, lr_at


GRID = (4, 8, 8)


class TestMaskSampler:
    def test_temporal_extent_is_full(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            mask = sample_multiblock_mask(rng, GRID)
            cells = set(i % (GRID[1] * GRID[2]) for i in mask.dropped)
            expected = {t * GRID[1] * GRID[2] + c for t in range(GRID[0]) for c in cells}
            assert expected == set(int(i) for i in mask.dropped)

    def test_block_cell_bounds_on_8x8(self):
        rng = np.random.default_rng(1)
        lo, hi = math.ceil(0.15 * 64), math.floor(0.7 * 64)
        for _ in range(500):
            mask = sample_multiblock_mask(rng, GRID)
            for block in mask.blocks:
                assert lo <= block.cells <= hi

    def test_aspect_audit_10k(self):
        rng = np.random.default_rng(2)
        for _ in range(5000):
            mask = sample_multiblock_mask(rng, (1, 8, 8))
            for block in mask.blocks:
                assert 0.75 <= block.aspect <= 1.5

    def test_partition_and_nonempty(self):
        rng = np.random.default_rng(3)
        n = GRID[0] * GRID[1] * GRID[2]
        for _ in range(100):
            mask = sample_multiblock_mask(rng, GRID)
            assert 0 < len(mask.dropped) < n
            assert len(mask.dropped) + len(mask.kept) == n

    def test_trivial_grid_rejected(self):
        with pytest.raises(ContractError):
            sample_multiblock_mask(np.random.default_rng(0), (1, 1, 1))


class TestJepaLoss:
    def _mask(self, n_drop, n):
        return MaskSpec(dropped=np.arange(n_drop), kept=np.arange(n_drop, n), grid=(1, 1, n))

    def test_zero_when_equal(self):
        mask = self._mask(3, 8)
        t = ad.tensor(np.random.default_rng(0).standard_normal((2, 8, 4)))
        pred = ad.tensor(t.data[:, :3].copy())
        assert pt.jepa_loss(pred, t, mask).item() == 0.0

    def test_kept_slot_perturbation_leaves_loss_unchanged(self):
        mask = self._mask(3, 8)
        rng = np.random.default_rng(1)
        target = rng.standard_normal((2, 8, 4)).astype(np.float32)
        pred = ad.tensor(rng.standard_normal((2, 3, 4)))
        base = pt.jepa_loss(pred, ad.tensor(target), mask).item()
        perturbed = target.copy()
        perturbed[:, 5] += 100.0
        after = pt.jepa_loss(pred, ad.tensor(perturbed), mask).item()
        assert base == after  # bitwise: kept slots are outside the support

    def test_hand_arithmetic(self):
        # two dropped slots, two dims: |1-0|+|0-0| and |0-0|+|2-0| averaged -> 0.75
        mask = self._mask(2, 4)
        pred = ad.tensor(np.array([[[1.0, 0.0], [0.0, 2.0]]]))
        target = ad.tensor(np.zeros((1, 4, 2)))
        assert abs(pt.jepa_loss(pred, target, mask).item() - 0.75) < 1e-7

    def test_slot_mismatch_rejected(self):
        mask = self._mask(3, 8)
        pred = ad.tensor(np.zeros((1, 2, 4)))
        with pytest.raises(ContractError):
            pt.jepa_loss(pred, ad.tensor(np.zeros((1, 8, 4))), mask)

    def test_stop_gradient_on_target_branch(self):
        mask = self._mask(2, 4)
        pred = ad.tensor(np.random.default_rng(2).standard_normal((1, 2, 3)), requires_grad=True)
        target = ad.tensor(np.random.default_rng(3).standard_normal((1, 4, 3)), requires_grad=True)
        loss = pt.jepa_loss(pred, target, mask)
        ad.backward(loss)
        assert pred.grad is not None
        assert target.grad is None


class TestEma:
    def test_m_one_fixed_point(self):
        teacher = {"w": np.array([1.0, 2.0])}
        pt.ema_update({"w": np.array([5.0, 5.0])}, teacher, 1.0)
        np.testing.assert_array_equal(teacher["w"], [1.0, 2.0])

    def test_m_zero_copies_student(self):
        teacher = {"w": np.array([1.0, 2.0])}
        pt.ema_update({"w": np.array([5.0, 6.0])}, teacher, 0.0)
        np.testing.assert_array_equal(teacher["w"], [5.0, 6.0])

    def test_paper_coefficient_scalar(self):
        out = pt.ema_update(np.array(1.0), np.array(0.0), 0.99925)
        assert abs(float(out) - 0.00075) < 1e-12

    def test_contraction(self):
        m = 0.9
        theta = np.array(2.0)
        for gap0 in [1.0, -3.0, 0.5]:
            new = pt.ema_update(theta, theta + gap0, m)
            assert abs(abs(float(new - theta)) - m * abs(gap0)) < 1e-12


class TestSchedule:
    AC = LrSchedule(7.5e-5, 4.25e-4, 0.0, 300, 2400, 300)
    PRE = LrSchedule(1e-4, 5.25e-4, 1e-6, 200, 1300, 500)

    def test_ac_step_zero(self):
        assert lr_at(0, self.AC) == 7.5e-5

    def test_warmup_end_is_peak(self):
        assert lr_at(self.AC.warmup, self.AC) == 4.25e-4
        assert lr_at(self.PRE.warmup, self.PRE) == 5.25e-4

    def test_last_step_is_final(self):
        assert abs(lr_at(self.PRE.total - 1, self.PRE) - 1e-6) < 1e-12

    def test_out_of_range_rejected(self):
        with pytest.raises(ContractError):
            lr_at(-1, self.PRE)
        with pytest.raises(ContractError):
            lr_at(self.PRE.total, self.PRE)

    def test_continuity_at_boundaries(self):
        sched = self.PRE
        bound = (sched.peak_lr - sched.start_lr) / sched.warmup + 1e-12
        for b in [1, sched.warmup, sched.warmup + 1, sched.warmup + sched.constant,
                  sched.warmup + sched.constant + 1]:
            assert abs(lr_at(b, sched) - lr_at(b - 1, sched)) <= bound


class TestProgressiveStage:
    STAGES = (pt.Stage(0, 8, 32), pt.Stage(1500, 16, 48))

    def test_base_during_warmup_constant(self):
        assert pt.progressive_stage(0, self.STAGES) == (8, 32)
        assert pt.progressive_stage(1499, self.STAGES) == (8, 32)

    def test_boost_in_decay(self):
        assert pt.progressive_stage(1500, self.STAGES) == (16, 48)
        assert pt.progressive_stage(1999, self.STAGES) == (16, 48)

    def test_single_stage_constant(self):
        assert pt.progressive_stage(123, (pt.Stage(0, 8, 32),)) == (8, 32)

    def test_uncovered_table_rejected(self):
        with pytest.raises(ContractError):
            pt.progressive_stage(5, (pt.Stage(10, 8, 32),))


class TestCollapseMetrics:
    def test_identical_embeddings(self):
        feats = np.ones((16, 48))
        std, cos = pt.collapse_metrics(feats)
        assert std == 0.0
        assert abs(cos - 1.0) < 1e-12

    def test_random_unit_embeddings_near_zero_cosine(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((64, 48))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        std, cos = pt.collapse_metrics(x)
        assert abs(cos) < 0.1
        assert std > 0.05

    def test_small_batch_rejected(self):
        with pytest.raises(ContractError):
            pt.collapse_metrics(np.ones((8, 4)))


def tiny_trainer(seed=0, ema_m=0.998, schedule=None):
    enc_cfg = EncoderConfig(frames=4, height=8, width=8, tubelet_t=2, patch=4,
                            embed_dim=24, depth=1, heads=2)
    sched = schedule or LrSchedule(1e-4, 5e-4, 1e-6, 5, 5, 5)
    cfg = pt.PretrainConfig(ema_m=ema_m, schedule=sched, batch_size=2,
                            stages=(pt.Stage(0, 4, 8),))
    return pt.Pretrainer(enc_cfg, cfg, np.random.default_rng(seed),
                         pt.JepaPredictorConfig(dim=16, depth=1, heads=2))


class TestPretrainStep:
    def test_teacher_receives_no_gradient(self):
        trainer = tiny_trainer()
        clips = np.random.default_rng(0).random((2, 4, 8, 8), dtype=np.float32)
        before = {k: v.data.copy() for k, v in trainer.teacher.encoder.named_parameters().items()}
        trainer.cfg = trainer.cfg  # no-op; keep step deterministic
        metrics = trainer.pretrain_step(clips)
        for name, p in trainer.teacher.encoder.named_parameters().items():
            assert p.grad is None, name
        assert np.isfinite(metrics["loss"])
        # teacher moved only through the EMA, not the optimizer
        for name, p in trainer.teacher.encoder.named_parameters().items():
            student = dict(trainer.encoder.named_parameters())[name]
            expected = 0.998 * before[name] + 0.002 * student.data
            np.testing.assert_allclose(p.data, expected, atol=1e-6)

    def test_frozen_system_keeps_loss_constant(self):
        sched = LrSchedule(0.0, 0.0, 0.0, 2, 2, 2)
        trainer = tiny_trainer(ema_m=1.0, schedule=sched)
        rng = np.random.default_rng(1)
        clips = rng.random((2, 4, 8, 8), dtype=np.float32)
        # pin the mask sampler so both steps see the same mask
        trainer.rng = np.random.default_rng(123)
        l1 = trainer.pretrain_step(clips)["loss"]
        trainer.rng = np.random.default_rng(123)
        l2 = trainer.pretrain_step(clips)["loss"]
        assert l1 == l2

    def test_seeded_run_reproducible(self):
        def run():
            trainer = tiny_trainer(seed=5)
            rng = np.random.default_rng(9)
            losses = []
            for _ in range(3):
                clips = rng.random((2, 4, 8, 8), dtype=np.float32)
                losses.append(trainer.pretrain_step(clips)["loss"])
            return losses

        assert run() == run()


def test_pretrain_config_invariants():
    with pytest.raises(ConfigError):
        pt.PretrainConfig(ema_m=0.0)
    with pytest.raises(ConfigError):
        pt.PretrainConfig(spatial_scale=(0.0, 0.5))
    with pytest.raises(ConfigError):
        pt.PretrainConfig(stages=(pt.Stage(5, 8, 32),))
