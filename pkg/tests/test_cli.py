#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

import contextlib
import io
import os
import tempfile
import unittest
from unittest import mock

import config as config_module
import main
from core.metrics import MetricsReport
from tests import small_config


class TestCommandLine(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.out = os.path.join(self.temp_dir.name, "run")
        self.config_path = os.path.join(self.temp_dir.name, "config.yaml")
        config_module.save_config(small_config(self.out), self.config_path)

    def tearDown(self):
        config_module.update_logging("INFO", False)
        self.temp_dir.cleanup()

    def run_main(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = main.main(list(argv) + ["--config", self.config_path])
        return code, stdout.getvalue(), stderr.getvalue()

    def test_parser_choices(self):
        parser = main.build_parser()
        args = parser.parse_args(["distill", "--decay", "exp", "--no-oracle", "--seed", "5"])
        self.assertEqual(args.command, "distill")
        self.assertEqual(args.decay, "exp")
        self.assertTrue(args.no_oracle)
        self.assertEqual(args.seed, 5)
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                parser.parse_args(["fly"])
            with self.assertRaises(SystemExit):
                parser.parse_args(["distill", "--decay", "cosine"])

    def test_version(self):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            with self.assertRaises(SystemExit) as ctx:
                main.build_parser().parse_args(["--version"])
        self.assertEqual(ctx.exception.code, 0)
        self.assertIn(config_module.VERSION, stdout.getvalue())

    def test_missing_prerequisite_exits_with_config_code(self):
        code, _, stderr = self.run_main("pretrain")
        self.assertEqual(code, main.EXIT_CONFIG)
        self.assertIn("omcrl collect", stderr)

    def test_unknown_config_key_exits_with_config_code(self):
        with open(self.config_path, "a", encoding="utf-8") as f:
            f.write("unexpected: 1\n")
        code, _, stderr = self.run_main("collect")
        self.assertEqual(code, main.EXIT_CONFIG)
        self.assertIn("unexpected", stderr)

    def test_overrides_reach_the_stage(self):
        with mock.patch("core.pipeline.distill") as distill:
            code, _, _ = self.run_main("distill", "--decay", "fixed", "--no-oracle", "--force", "--out", self.out)
        self.assertEqual(code, main.EXIT_OK)
        config = distill.call_args.args[0]
        self.assertEqual(config["decay"]["kind"], "fixed")
        self.assertFalse(config["distill"]["use_oracle"])
        self.assertTrue(distill.call_args.kwargs["force"])
        self.assertTrue(os.path.exists(os.path.join(self.out, config_module.LOG_FOLDER, "app.log")))

    def test_eval_prints_report_table(self):
        report = MetricsReport(ne=1.5, os=100.0, sr=50.0, spl=0.4, cr=0.0, tts=None, episodes=2)
        with mock.patch("core.pipeline.evaluate", return_value=report) as evaluate:
            code, stdout, _ = self.run_main("eval", "--policy", "oracle")
        self.assertEqual(code, main.EXIT_OK)
        self.assertEqual(evaluate.call_args.kwargs["policy_name"], "oracle")
        self.assertIn("oracle", stdout)
        self.assertIn("--", stdout)

    def test_unexpected_exception_exits_with_failure(self):
        with mock.patch("core.pipeline.teach", side_effect=RuntimeError("boom")):
            with contextlib.redirect_stderr(io.StringIO()):
                code, _, _ = self.run_main("teach")
        self.assertEqual(code, main.EXIT_FAILURE)

    def test_rotate_log_file(self):
        log_file = os.path.join(self.temp_dir.name, "app.log")
        with open(log_file, "w", encoding="utf-8") as f:
            f.write("x" * 32)
        main.rotate_log_file(log_file, max_size=64)
        self.assertTrue(os.path.exists(log_file))
        main.rotate_log_file(log_file, max_size=16)
        self.assertFalse(os.path.exists(log_file))
        rotated = [name for name in os.listdir(self.temp_dir.name) if name.startswith("app_")]
        self.assertEqual(len(rotated), 1)


if __name__ == "__main__":
    unittest.main()
