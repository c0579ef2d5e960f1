#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

import unittest

import numpy as np

from core.errors import ContractError, NumericError
from core.nn import ParamSet
from core.optim import Adam, LrSchedule, lr_schedule


class TestSchedules(unittest.TestCase):

    def test_warmup_inverse_sqrt(self):
        self.assertEqual(lr_schedule("warmup-inv-sqrt", 0, 2e-3, warmup=100), 0.0)
        self.assertAlmostEqual(lr_schedule("warmup-inv-sqrt", 50, 2e-3, warmup=100), 1e-3)
        self.assertAlmostEqual(lr_schedule("warmup-inv-sqrt", 100, 2e-3, warmup=100), 2e-3)
        self.assertAlmostEqual(lr_schedule("warmup-inv-sqrt", 400, 2e-3, warmup=100), 1e-3)

    def test_linear_decay(self):
        self.assertAlmostEqual(lr_schedule("linear-decay", 0, 3e-4, total_steps=1000), 3e-4)
        self.assertAlmostEqual(lr_schedule("linear-decay", 500, 3e-4, total_steps=1000), 1.5e-4)
        self.assertEqual(lr_schedule("linear-decay", 2000, 3e-4, total_steps=1000), 0.0)

    def test_constant_and_errors(self):
        self.assertEqual(LrSchedule("constant", 1e-3)(12345), 1e-3)
        with self.assertRaises(ContractError):
            lr_schedule("constant", -1, 1e-3)
        with self.assertRaises(ContractError):
            lr_schedule("cosine", 1, 1e-3)


class TestAdam(unittest.TestCase):

    def setUp(self):
        self.params = ParamSet()
        self.params.add("w", np.array([1.0, -2.0, 3.0]))

    def test_first_step_moves_by_learning_rate(self):
        optimizer = Adam(self.params, LrSchedule("constant", 0.1))
        self.params["w"].grad = np.array([0.5, -4.0, 0.0])
        used = optimizer.step()
        self.assertEqual(used, 0.1)
        # bias-corrected first step is lr·g/(|g| + eps)
        np.testing.assert_allclose(self.params["w"].values, [0.9, -1.9, 3.0], atol=1e-6)
        self.assertIsNone(self.params["w"].grad)

    def test_explicit_rate_overrides_schedule(self):
        optimizer = Adam(self.params, LrSchedule("constant", 0.1))
        self.params["w"].grad = np.ones(3)
        self.assertEqual(optimizer.step(lr=0.0), 0.0)
        np.testing.assert_allclose(self.params["w"].values, [1.0, -2.0, 3.0])

    def test_warmup_rate_starts_at_first_step(self):
        optimizer = Adam(self.params, LrSchedule("warmup-inv-sqrt", 2e-3, warmup=10))
        self.assertAlmostEqual(optimizer.lr, 2e-4)

    def test_reported_rate_is_the_applied_rate(self):
        for schedule in (LrSchedule("warmup-inv-sqrt", 2e-3, warmup=10), LrSchedule("linear-decay", 0.1, total_steps=4),
                         LrSchedule("constant", 0.1)):
            with self.subTest(kind=schedule.kind):
                optimizer = Adam(self.params, schedule)
                for t in range(1, 4):
                    reported = optimizer.lr
                    self.assertEqual(reported, schedule(t))
                    self.params["w"].grad = np.ones(3)
                    self.assertEqual(optimizer.step(), reported)

    def test_non_finite_gradient_names_parameter(self):
        optimizer = Adam(self.params, LrSchedule("constant", 0.1), label="encoder")
        self.params["w"].grad = np.array([np.nan, 0.0, 0.0])
        with self.assertRaises(NumericError) as ctx:
            optimizer.step()
        self.assertIn("encoder.w", str(ctx.exception))
        np.testing.assert_allclose(self.params["w"].values, [1.0, -2.0, 3.0])


if __name__ == "__main__":
    unittest.main()
