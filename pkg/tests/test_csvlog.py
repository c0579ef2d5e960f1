#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

import os
import tempfile
import unittest

from core.csvlog import CsvLog, format_value, read_csv


class TestCsvLog(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.temp_dir.name, "logs", "teach.csv")

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_schema_line_and_header(self):
        with CsvLog(self.path, "teach") as log:
            log.write({"env_step": 10, "update": 1, "return": None, "surrogate": 0.125, "lr": 3e-4})
        with open(self.path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "# schema: teach v1")
        self.assertEqual(lines[1], "env_step,update,return,surrogate,value_loss,lr")
        self.assertEqual(lines[2], "10,1,,0.125,,0.0003")

    def test_read_back(self):
        with CsvLog(self.path, "report") as log:
            log.write_many([{"policy": "student", "sr": 50.0, "tts": "--"}])
        schema, version, rows = read_csv(self.path)
        self.assertEqual((schema, version), ("report", 1))
        self.assertEqual(rows[0]["policy"], "student")
        self.assertEqual(rows[0]["tts"], "--")

    def test_format_value(self):
        self.assertEqual(format_value(True), "1")
        self.assertEqual(format_value(1 / 3), "0.3333333333")
        self.assertEqual(format_value(None), "")


if __name__ == "__main__":
    unittest.main()
