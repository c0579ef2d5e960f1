#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from core import autodiff as ad
from core import nn, trainers
from core.autodiff import DiffTensor, Tape
from core.contrastive import Pretrainer
from core.csvlog import read_csv
from core.errors import ConfigError, ContractError
from core.nn import GaussianAction
from core.ppo import PpoHyper, TrajectoryBatch
from core.trainers import DecaySchedule, OraclePolicy, StudentPolicy
from tests import small_config
from tests.test_contrastive import random_corpus


def gaussian(mean, log_std):
    return GaussianAction(DiffTensor(np.asarray(mean, dtype=float)), DiffTensor(np.asarray(log_std, dtype=float)))


def distill_batch(alphas, teacher_mask):
    n = len(alphas)
    dist = gaussian(np.zeros((n, 3)), np.zeros(3))
    return TrajectoryBatch(
        observations={"obs": np.zeros((n, 1))},
        actions=np.zeros((n, 3)),
        log_probs=dist.log_prob(np.zeros((n, 3))).values,
        rewards=np.zeros(n),
        values=np.zeros(n),
        dones=np.zeros(n, dtype=bool),
        next_values=np.zeros(n),
        segment_ends=np.zeros(n, dtype=bool),
        env_steps=np.arange(n),
        alphas=np.asarray(alphas, dtype=float),
        teacher_mean=np.tile([1.0, 0.0, 0.0], (n, 1)),
        teacher_log_std=np.zeros((n, 3)),
        teacher_mask=np.asarray(teacher_mask, dtype=bool),
        returns=np.ones(n),
    )


class TestDecay(unittest.TestCase):

    def test_linear(self):
        schedule = DecaySchedule()
        self.assertAlmostEqual(trainers.alpha(0, schedule), 0.95)
        self.assertAlmostEqual(trainers.alpha(5000, schedule), 0.475)
        self.assertEqual(trainers.alpha(10000, schedule), 0.0)
        self.assertEqual(trainers.alpha(25000, schedule), 0.0)

    def test_exponential_and_fixed(self):
        schedule = DecaySchedule(kind="exponential")
        self.assertAlmostEqual(trainers.alpha(999, schedule), 0.95)
        self.assertAlmostEqual(trainers.alpha(2500, schedule), 0.95 ** 3)
        self.assertEqual(trainers.alpha(10 ** 6, DecaySchedule(kind="fixed", alpha0=0.3)), 0.3)

    def test_negative_step(self):
        with self.assertRaises(ContractError):
            trainers.alpha(-1, DecaySchedule())


class TestKl(unittest.TestCase):

    def test_identical_distributions(self):
        p = gaussian([[0.3, -0.2, 0.1]], [0.1, 0.2, -0.4])
        q = gaussian([[0.3, -0.2, 0.1]], [0.1, 0.2, -0.4])
        self.assertAlmostEqual(float(trainers.kl_gaussian(p, q).values[0]), 0.0, places=12)

    def test_closed_form_values(self):
        p = gaussian([[0.0, 0.0, 0.0]], [0.0, 0.0, 0.0])
        shifted = gaussian([[1.0, 0.0, 0.0]], [0.0, 0.0, 0.0])
        self.assertAlmostEqual(float(trainers.kl_gaussian(p, shifted).values[0]), 0.5, places=12)
        wider = gaussian([[0.0, 0.0, 0.0]], [math.log(2.0), 0.0, 0.0])
        self.assertAlmostEqual(float(trainers.kl_gaussian(p, wider).values[0]), math.log(2.0) - 0.375, places=12)

    def test_single_row_is_scalar(self):
        kl = trainers.kl_gaussian(gaussian([0.0, 0.0, 0.0], [0.0] * 3), gaussian([1.0, 1.0, 0.0], [0.0] * 3))
        self.assertEqual(kl.shape, ())
        self.assertAlmostEqual(kl.item(), 1.0)

    def test_monte_carlo_approaches_closed_form(self):
        p = gaussian([[0.2, -0.1, 0.0]], [0.0, -0.5, 0.3])
        q = gaussian([[0.0, 0.4, -0.2]], [0.2, 0.0, 0.1])
        exact = float(trainers.kl_gaussian(p, q).values[0])
        estimate = float(trainers.kl_monte_carlo(p, q, 20000, np.random.default_rng(0)).values[0])
        self.assertAlmostEqual(estimate, exact, delta=0.05)

    def test_student_gradient_only(self):
        mean = ad.parameter(np.zeros((1, 3)))
        teacher_mean = ad.parameter(np.ones((1, 3)))
        with Tape() as tape:
            kl = trainers.kl_gaussian(GaussianAction(teacher_mean, DiffTensor(np.zeros(3))),
                                      GaussianAction(mean, DiffTensor(np.zeros(3))))
            tape.backward(ad.sum(kl))
        np.testing.assert_allclose(mean.grad, [[-1.0, -1.0, -1.0]])
        self.assertIsNone(teacher_mean.grad)


class TestStudentLoss(unittest.TestCase):

    def setUp(self):
        self.hyper = PpoHyper(batch_size=2, buffer_size=2)
        self.indices = np.arange(2)
        self.advantages = np.array([1.0, 2.0])

    def student(self):
        return gaussian(np.zeros((2, 3)), np.zeros(3)), DiffTensor(np.zeros(2))

    def test_combine_losses(self):
        self.assertEqual(trainers.combine_losses(2.0, 4.0, 0.5, 1.0), 3.0)
        self.assertEqual(trainers.combine_losses(2.0, 4.0, 0.0, 1.0), 2.0)

    def test_uniform_weight_matches_combination(self):
        batch = distill_batch([0.5, 0.5], [True, True])
        dist, values = self.student()
        loss, stats = trainers.student_loss(dist, values, batch, self.indices, self.advantages, self.hyper, beta=2.0)
        # unweighted PPO loss is -0.5, KL to the shifted teacher is 0.5 per row
        self.assertAlmostEqual(loss.item(), trainers.combine_losses(-0.5, 0.5, 0.5, 2.0))
        self.assertAlmostEqual(stats["kl"], 1.0)
        self.assertEqual(stats["kl_rows"], 2)

    def test_zero_weight_ignores_teacher(self):
        batch = distill_batch([0.0, 0.0], [False, False])
        dist, values = self.student()
        loss, stats = trainers.student_loss(dist, values, batch, self.indices, self.advantages, self.hyper)
        self.assertAlmostEqual(loss.item(), -0.5)
        self.assertEqual(stats["kl_rows"], 0)

    def test_missing_teacher_parameters(self):
        batch = distill_batch([0.5, 0.0], [False, False])
        dist, values = self.student()
        with self.assertRaises(ContractError):
            trainers.student_loss(dist, values, batch, self.indices, self.advantages, self.hyper)


class TrainerTestCase(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.out = Path(self.temp_dir.name)
        self.config = small_config(self.temp_dir.name)
        pretrainer = Pretrainer(self.config, random_corpus())
        self.upstream = pretrainer.checkpoints("hash")

    def tearDown(self):
        self.temp_dir.cleanup()

    def student_policy(self, config=None):
        encoder, projection = trainers.load_encoder(config or self.config, self.upstream["encoder"],
                                                    self.upstream["projection"])
        return StudentPolicy.initialize(config or self.config, encoder, projection, np.random.default_rng(0))


class TestEncoderLoading(TrainerTestCase):

    def test_loaded_encoder_is_frozen(self):
        encoder, projection = trainers.load_encoder(self.config, self.upstream["encoder"], self.upstream["projection"])
        self.assertFalse(any(t.requires_grad for _, t in encoder.items()))
        self.assertEqual(self.upstream["encoder"].meta["encoder_digest"], trainers.encoder_digest(encoder, projection))

    def test_missing_projection(self):
        with self.assertRaises(ConfigError):
            trainers.load_encoder(self.config, self.upstream["encoder"], None)

    def test_projection_from_another_run(self):
        other = Pretrainer(small_config(self.temp_dir.name, seed=9), random_corpus()).checkpoints("hash")
        with self.assertRaises(ConfigError):
            trainers.load_encoder(self.config, self.upstream["encoder"], other["projection"])

    def test_pinned_encoder_hash(self):
        config = small_config(self.temp_dir.name, distill={"encoder_hash": "0" * 64})
        with self.assertRaises(ConfigError):
            trainers.load_encoder(config, self.upstream["encoder"], self.upstream["projection"])


class TestPolicies(TrainerTestCase):

    def test_student_observation(self):
        policy = self.student_policy()
        env = trainers.NavEnv(trainers.ArenaSettings.from_config(self.config["arena"]), 2, seed=0)
        env.reset()
        obs = policy.observe(env)
        self.assertEqual(obs["obs"].shape, (8 + 12,))
        self.assertEqual(policy.act(env).shape, (3,))

    def test_oracle_observation(self):
        policy = OraclePolicy.initialize(self.config, np.random.default_rng(0))
        env = trainers.NavEnv(trainers.ArenaSettings.from_config(self.config["arena"]), 2, seed=0)
        env.reset()
        obs = policy.observe(env)
        self.assertEqual(obs["depth"].shape, (2, 16))
        self.assertEqual(obs["state"].shape, (15,))
        dist, value = policy.forward({key: v[None] for key, v in obs.items()})
        self.assertEqual(dist.mean.shape, (1, 3))
        self.assertEqual(value.shape, (1,))

    def test_student_checkpoint_needs_same_encoder(self):
        policy = self.student_policy()
        checkpoint = trainers.Checkpoint("student", policy.params.state(), "hash", meta={"encoder_digest": "other"})
        encoder, projection = trainers.load_encoder(self.config, self.upstream["encoder"], self.upstream["projection"])
        with self.assertRaises(ConfigError):
            StudentPolicy.from_checkpoint(self.config, encoder, projection, checkpoint)


class TestTrainers(TrainerTestCase):

    def test_oracle_training(self):
        policy = OraclePolicy.initialize(self.config, np.random.default_rng(0))
        before = policy.params.digest()
        trainer = trainers.OracleTrainer(self.config, policy, self.out)
        progress = []
        history = trainer.train(on_progress=lambda done, total: progress.append((done, total)))
        self.assertEqual(trainer.env_steps, 32)
        self.assertEqual(len(history), 2)
        self.assertEqual(progress[-1], (32, 32))
        self.assertNotEqual(before, policy.params.digest())
        schema, _, rows = read_csv(self.out / "teach.csv")
        self.assertEqual(schema, "teach")
        self.assertEqual([row["env_step"] for row in rows], ["16", "32"])

    def test_student_training_keeps_encoder_frozen(self):
        policy = self.student_policy()
        digest = policy.encoder_digest()
        oracle = OraclePolicy.initialize(self.config, np.random.default_rng(1))
        trainer = trainers.StudentTrainer(self.config, policy, oracle, self.out)
        history = trainer.train()
        self.assertEqual(policy.encoder_digest(), digest)
        self.assertGreater(history[0]["alpha"], history[1]["alpha"])
        self.assertGreaterEqual(history[0]["kl"], 0.0)
        _, _, rows = read_csv(self.out / "distill.csv")
        self.assertEqual(len(rows), 2)
        meta = trainer.checkpoint("hash").meta
        self.assertEqual(meta["encoder_digest"], digest)
        self.assertTrue(meta["use_oracle"])

    def test_student_without_oracle(self):
        config = small_config(self.temp_dir.name, distill={"use_oracle": False})
        trainer = trainers.StudentTrainer(config, self.student_policy(config), None, self.out)
        history = trainer.train()
        self.assertEqual([row["alpha"] for row in history], [0.0, 0.0])
        self.assertEqual([row["kl"] for row in history], [0.0, 0.0])

    def test_oracle_required_when_enabled(self):
        with self.assertRaises(ContractError):
            trainers.StudentTrainer(self.config, self.student_policy(), None)

    def test_frozen_parameter_on_tape_is_rejected(self):
        policy = self.student_policy()
        trainer = trainers.StudentTrainer(self.config, policy, OraclePolicy.initialize(self.config,
                                                                                      np.random.default_rng(1)))
        frozen = policy.encoder["fc.bias"]
        frozen.requires_grad = True
        with Tape() as tape:
            ad.sum(ad.mul(frozen, 2.0))
            with self.assertRaises(ContractError):
                trainer.check_isolation(tape)

    def test_stop_flag(self):
        trainer = trainers.OracleTrainer(self.config, OraclePolicy.initialize(self.config, np.random.default_rng(0)))
        self.assertEqual(trainer.train(stop_flag=lambda: True), [])
        self.assertEqual(trainer.env_steps, 0)


class TestStageEntryPoints(TrainerTestCase):

    def test_train_oracle_then_student(self):
        oracle = trainers.train_oracle(self.config, self.out / "teach")
        self.assertTrue(oracle["checkpoint"].exists())
        self.assertEqual(oracle["report"].episodes, 2)
        self.assertTrue((self.out / "teach" / "teach_eval_report.csv").exists())

        oracle_ckpt = trainers.load_checkpoint(oracle["checkpoint"], component="oracle")
        student = trainers.train_student(self.config, self.out / "distill", self.upstream["encoder"],
                                         self.upstream["projection"], oracle_ckpt,
                                         encoder_files={"encoder_file": "encoder.ckpt"})
        loaded = trainers.load_checkpoint(student["checkpoint"], component="student")
        self.assertEqual(loaded.meta["encoder_file"], "encoder.ckpt")
        self.assertEqual(student["report"].episodes, 2)

    def test_student_needs_oracle_checkpoint(self):
        with self.assertRaises(ConfigError):
            trainers.train_student(self.config, self.out, self.upstream["encoder"], self.upstream["projection"], None)


if __name__ == "__main__":
    unittest.main()
