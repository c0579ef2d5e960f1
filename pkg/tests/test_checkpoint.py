#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

import os
import struct
import tempfile
import unittest

import numpy as np

from core import checkpoint as ckpt
from core.checkpoint import Checkpoint
from core.errors import ConfigError, IntegrityError, VersionError


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.temp_dir.name, "nested", "encoder.ckpt")
        self.checkpoint = Checkpoint(
            component="encoder",
            params={"fc.weight": np.arange(6.0).reshape(2, 3), "fc.bias": np.array([0.5, -0.25])},
            config_hash="abc123",
            step=42,
            rng_state={"state": 7},
            meta={"use_projection": True},
        )

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_save_and_load(self):
        ckpt.save_checkpoint(self.path, self.checkpoint)
        loaded = ckpt.load_checkpoint(self.path, expected_hash="abc123", component="encoder")
        self.assertEqual(loaded.step, 42)
        self.assertEqual(loaded.meta, {"use_projection": True})
        self.assertEqual(loaded.rng_state, {"state": 7})
        self.assertEqual(list(loaded.params), ["fc.weight", "fc.bias"])
        np.testing.assert_array_equal(loaded.params["fc.weight"], self.checkpoint.params["fc.weight"])
        self.assertEqual(loaded.params["fc.bias"].dtype, np.float32)
        # no temporary files left behind
        self.assertEqual(os.listdir(os.path.dirname(self.path)), ["encoder.ckpt"])

    def test_state_with_prefix(self):
        checkpoint = Checkpoint("oracle", {"actor.w": np.ones(2), "critic.w": np.zeros(2)}, "h")
        self.assertEqual(list(checkpoint.state("actor")), ["w"])
        self.assertEqual(checkpoint.state()["critic.w"].dtype, np.float64)

    def test_truncated_file(self):
        blob = ckpt.encode_checkpoint(self.checkpoint)
        for cut in (10, len(blob) - 1):
            with self.assertRaises(IntegrityError):
                ckpt.decode_checkpoint(blob[:cut])

    def test_flipped_payload_byte(self):
        blob = bytearray(ckpt.encode_checkpoint(self.checkpoint))
        blob[-40] ^= 0xFF
        with self.assertRaises(IntegrityError):
            ckpt.decode_checkpoint(bytes(blob))

    def test_bad_magic(self):
        blob = ckpt.encode_checkpoint(self.checkpoint)
        with self.assertRaises(IntegrityError):
            ckpt.decode_checkpoint(b"NOTACKPT" + blob[8:])

    def test_other_format_version(self):
        blob = ckpt.encode_checkpoint(self.checkpoint)
        with self.assertRaises(VersionError):
            ckpt.decode_checkpoint(blob[:8] + struct.pack("<I", 2) + blob[12:])

    def test_component_mismatch(self):
        ckpt.save_checkpoint(self.path, self.checkpoint)
        with self.assertRaises(ConfigError):
            ckpt.load_checkpoint(self.path, component="oracle")

    def test_hash_mismatch_and_force(self):
        ckpt.save_checkpoint(self.path, self.checkpoint)
        with self.assertRaises(ConfigError):
            ckpt.load_checkpoint(self.path, expected_hash="other")
        with self.assertLogs("app", level="WARNING"):
            loaded = ckpt.load_checkpoint(self.path, expected_hash="other", force=True)
        self.assertEqual(loaded.config_hash, "abc123")

    def test_newer_release_only_warns(self):
        self.checkpoint.app_version = "v99.0.0"
        ckpt.save_checkpoint(self.path, self.checkpoint)
        with self.assertLogs("app", level="WARNING") as logs:
            ckpt.load_checkpoint(self.path)
        self.assertIn("newer release", logs.output[0])

    def test_unknown_component(self):
        self.checkpoint.component = "decoder"
        with self.assertRaises(ConfigError):
            ckpt.encode_checkpoint(self.checkpoint)


if __name__ == "__main__":
    unittest.main()
