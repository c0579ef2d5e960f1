#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

import tempfile
import unittest
from pathlib import Path

from core import pipeline
from core.csvlog import read_csv
from core.errors import ConfigError, PrerequisiteError
from tests import small_config


class TestPipeline(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.root = Path(self.temp_dir.name) / "run"
        self.config = small_config(str(self.root))

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_full_run(self):
        collected = pipeline.collect(self.config)
        self.assertEqual(collected["episodes"], 4)
        self.assertTrue((self.root / "corpus" / "index.json").exists())

        pretrained = pipeline.pretrain(self.config)
        for component in ("encoder", "projection", "transformer"):
            self.assertTrue((self.root / "upstream" / f"{component}.ckpt").exists())
        self.assertEqual(set(pretrained["checkpoints"]), {"encoder", "projection", "transformer"})

        taught = pipeline.teach(self.config)
        self.assertEqual(taught["env_steps"], 32)
        self.assertTrue((self.root / "teach" / "oracle.ckpt").exists())

        distilled = pipeline.distill(self.config)
        self.assertEqual(distilled["env_steps"], 32)
        self.assertTrue((self.root / "distill" / "student.ckpt").exists())

        for policy in ("student", "oracle", "scripted"):
            with self.subTest(policy=policy):
                report = pipeline.evaluate(self.config, policy)
                self.assertEqual(report.episodes, 2)
                self.assertGreaterEqual(report.os, report.sr)
                for kind in ("episodes", "report", "trajectories"):
                    self.assertTrue((self.root / "eval" / f"{policy}_{kind}.csv").exists())

        figures = pipeline.plot(self.config)["figures"]
        names = {figure.name for figure in figures}
        self.assertIn("pretrain_loss.svg", names)
        self.assertIn("alpha.svg", names)
        self.assertIn("metrics.svg", names)
        self.assertTrue((self.root / "config.yaml").exists())

    def test_same_seed_gives_identical_logs(self):
        roots = [Path(self.temp_dir.name) / name for name in ("first", "second")]
        for root in roots:
            config = small_config(str(root))
            pipeline.collect(config)
            pipeline.pretrain(config)
            pipeline.teach(config)
            pipeline.distill(config)
            pipeline.evaluate(config, "student")

        logs = sorted(p.relative_to(roots[0]) for p in roots[0].rglob("*.csv"))
        self.assertEqual(logs, sorted(p.relative_to(roots[1]) for p in roots[1].rglob("*.csv")))
        self.assertIn(Path("distill") / "distill.csv", logs)
        for relative in logs:
            with self.subTest(csv=str(relative)):
                self.assertEqual((roots[0] / relative).read_bytes(), (roots[1] / relative).read_bytes())

        # evaluating the saved student reproduces the report written after training
        _, _, trained = read_csv(roots[0] / "distill" / "distill_eval_report.csv")
        _, _, reloaded = read_csv(roots[0] / "eval" / "student_report.csv")
        self.assertEqual(trained, reloaded)

    def test_curl_mode_writes_separate_checkpoints(self):
        config = small_config(str(self.root), upstream={"mode": "curl"})
        pipeline.collect(config)
        pipeline.pretrain(config)
        self.assertTrue((self.root / "upstream" / "encoder_curl.ckpt").exists())
        self.assertFalse((self.root / "upstream" / "encoder.ckpt").exists())

        # the masked checkpoints are what distill looks for under the default mode
        with self.assertRaises(PrerequisiteError) as ctx:
            pipeline.distill(self.config)
        self.assertEqual(ctx.exception.required_command, "pretrain")

    def test_pretrain_without_corpus(self):
        with self.assertRaises(PrerequisiteError) as ctx:
            pipeline.pretrain(self.config)
        self.assertIn("omcrl collect", str(ctx.exception))

    def test_pretrain_rejects_other_image_size(self):
        pipeline.collect(self.config)
        with self.assertRaises(ConfigError):
            pipeline.pretrain(small_config(str(self.root), arena={"image_size": 24}))

    def test_distill_requires_oracle(self):
        pipeline.collect(self.config)
        pipeline.pretrain(self.config)
        with self.assertRaises(PrerequisiteError) as ctx:
            pipeline.distill(self.config)
        self.assertEqual(ctx.exception.required_command, "teach")

    def test_eval_requires_artifacts(self):
        with self.assertRaises(PrerequisiteError) as ctx:
            pipeline.evaluate(self.config, "oracle")
        self.assertEqual(ctx.exception.required_command, "teach")

        pipeline.collect(self.config)
        pipeline.pretrain(self.config)
        with self.assertRaises(PrerequisiteError) as ctx:
            pipeline.evaluate(self.config, "student")
        self.assertEqual(ctx.exception.required_command, "distill")

    def test_unknown_eval_policy(self):
        with self.assertRaises(ConfigError):
            pipeline.evaluate(self.config, "human")

    def test_plot_without_output(self):
        with self.assertRaises(PrerequisiteError):
            pipeline.plot(self.config)


if __name__ == "__main__":
    unittest.main()
