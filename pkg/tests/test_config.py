#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

import copy
import logging
import os
import tempfile
import unittest

import yaml

import config as config_module
from core.errors import ConfigError


class TestConfigModule(unittest.TestCase):

    def setUp(self):
        # Create a temporary config file
        self.temp_dir = tempfile.TemporaryDirectory()
        self.temp_config_path = os.path.join(self.temp_dir.name, "config.yaml")
        self.original_config_file = config_module.CONFIG_FILE
        config_module.CONFIG_FILE = self.temp_config_path

    def tearDown(self):
        # Restore original config file path
        config_module.CONFIG_FILE = self.original_config_file
        config_module.update_logging("INFO", False)
        self.temp_dir.cleanup()

    def write_yaml(self, data):
        with open(self.temp_config_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(data, f)

    def test_save_and_load_config(self):
        # Save custom configuration
        test_config = copy.deepcopy(config_module.DEFAULT_CONFIG)
        test_config["seed"] = 11
        test_config["logging"]["level"] = "DEBUG"
        test_config["upstream"]["mask_prob"] = 0.25
        config_module.save_config(test_config, self.temp_config_path)

        # Load configuration
        loaded_config = config_module.load_config()

        self.assertEqual(loaded_config["seed"], 11)
        self.assertEqual(loaded_config["logging"]["level"], "DEBUG")
        self.assertEqual(loaded_config["upstream"]["mask_prob"], 0.25)
        self.assertEqual(config_module.app_logger.level, logging.DEBUG)

    def test_load_config_creates_default_if_missing(self):
        # Ensure no config exists
        self.assertFalse(os.path.exists(self.temp_config_path))

        # Load config should auto-create default config
        loaded_config = config_module.load_config()
        self.assertTrue(os.path.exists(self.temp_config_path))
        self.assertEqual(loaded_config, config_module.DEFAULT_CONFIG)

    def test_partial_file_is_merged_with_defaults(self):
        self.write_yaml({"rl": {"clip": 0.1}})
        loaded_config = config_module.load_config()
        self.assertEqual(loaded_config["rl"]["clip"], 0.1)
        self.assertEqual(loaded_config["rl"]["gamma"], config_module.DEFAULT_CONFIG["rl"]["gamma"])

    def test_validate_config_invalid_logging_values(self):
        validated = config_module.validate_config({"logging": {"level": "INVALID", "verbose": "yes"}})

        self.assertEqual(validated["logging"]["level"], config_module.DEFAULT_CONFIG["logging"]["level"])
        self.assertEqual(validated["logging"]["verbose"], config_module.DEFAULT_CONFIG["logging"]["verbose"])

    def test_unknown_key_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            config_module.validate_config({"upstream": {"masc_prob": 0.5}})
        self.assertIn("upstream.masc_prob", str(ctx.exception))

    def test_invalid_values_rejected(self):
        invalid_configs = [
            {"upstream": {"mask_prob": 1.5}},
            {"upstream": {"temperature": 0.0}},
            {"upstream": {"latent_dim": 7}},
            {"upstream": {"crop_size": 80}},
            {"rl": {"gae_lambda": 0.0}},
            {"rl": {"batch_size": 20000}},
            {"decay": {"kind": "cosine"}},
            {"arena": {"max_steps": "many"}},
            {"corpus": {"policy_mix": {"random": 0.7, "scripted": 0.7}}},
            {"seed": 1.5},
        ]
        for invalid in invalid_configs:
            with self.subTest(invalid=invalid):
                with self.assertRaises(ConfigError):
                    config_module.validate_config(invalid)

    def test_malformed_yaml(self):
        with open(self.temp_config_path, "w", encoding="utf-8") as f:
            f.write("rl: [unclosed\n")
        with self.assertRaises(ConfigError):
            config_module.load_config()

    def test_apply_overrides(self):
        updated = config_module.apply_overrides(
            config_module.validate_config({}), seed=4, mask_prob=0.75, decay="exp", no_oracle=True,
            no_projection=True, curl_mode=True, out="elsewhere")
        self.assertEqual(updated["seed"], 4)
        self.assertEqual(updated["upstream"]["mask_prob"], 0.75)
        self.assertEqual(updated["decay"]["kind"], "exponential")
        self.assertFalse(updated["distill"]["use_oracle"])
        self.assertFalse(updated["upstream"]["use_projection"])
        self.assertEqual(updated["upstream"]["mode"], "curl")
        self.assertEqual(updated["output_dir"], "elsewhere")

    def test_override_out_of_range(self):
        with self.assertRaises(ConfigError):
            config_module.apply_overrides(config_module.validate_config({}), mask_prob=-0.1)

    def test_model_config_hash(self):
        base = config_module.validate_config({})
        self.assertEqual(config_module.model_config_hash(base),
                         config_module.model_config_hash(config_module.validate_config({"seed": 9})))
        changed = config_module.validate_config({"upstream": {"latent_dim": 32}})
        self.assertNotEqual(config_module.model_config_hash(base), config_module.model_config_hash(changed))

    def test_configure_logging_writes_files(self):
        config_module.configure_logging(self.temp_dir.name, "INFO", verbose=True, console=False)
        config_module.app_logger.info("hello from the test")
        config_module.debug_logger.debug("debug line")
        log_dir = os.path.join(self.temp_dir.name, config_module.LOG_FOLDER)
        with open(os.path.join(log_dir, "app.log"), encoding="utf-8") as f:
            self.assertIn("hello from the test", f.read())
        with open(os.path.join(log_dir, "debug.log"), encoding="utf-8") as f:
            self.assertIn("debug line", f.read())


if __name__ == "__main__":
    unittest.main()
