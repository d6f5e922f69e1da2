import io
import json
import shutil
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np

from meta_uncertainty.debug_logger import DebugLogger, debug_stage


class TestDebugLogger(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.settings = {
            "debug": {
                "enabled": True,
                "level": "DEBUG",
                "log_state": True,
                "log_errors_full": True,
                "outputs": {"file": True, "file_path": str(self.tmp / "debug.log")},
                "save_intermediate": {"enabled": True, "path": str(self.tmp / "intermediate"), "formats": ["json"]},
            }
        }

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_stage_decorator_times_and_saves_state(self):
        @debug_stage("Toy Stage")
        def node(state, config):
            return {**state, "workflow_status": "done", "kb": ["bulky"]}

        logger = DebugLogger(self.settings)
        result = node({"_debug_logger": logger, "command": "run"}, None)
        self.assertEqual(result["workflow_status"], "done")
        self.assertIn("duration", logger.stage_timings["Toy Stage"])

        saved = list((self.tmp / "intermediate" / "state").glob("Toy Stage_*.json"))
        self.assertEqual(len(saved), 1)
        state = json.loads(saved[0].read_text())
        self.assertEqual(state["workflow_status"], "done")
        self.assertNotIn("kb", state)
        self.assertNotIn("_debug_logger", state)

    def test_decorator_without_logger_is_transparent(self):
        @debug_stage("Plain")
        def node(state, config):
            return {"value": config}

        self.assertEqual(node({}, 3), {"value": 3})

    def test_save_serializes_arrays(self):
        logger = DebugLogger(self.settings)
        logger.save("fcm", "model", {"centers": np.eye(2), "n": np.int64(2)})
        saved = list((self.tmp / "intermediate" / "fcm").glob("model_*.json"))
        self.assertEqual(json.loads(saved[0].read_text()), {"centers": [[1.0, 0.0], [0.0, 1.0]], "n": 2})

    def test_error_is_saved(self):
        logger = DebugLogger(self.settings)
        try:
            raise RuntimeError("boom")
        except RuntimeError as e:
            logger.log_error(e, "Trainer")
        saved = list((self.tmp / "intermediate" / "errors").glob("Trainer_*.json"))
        self.assertEqual(json.loads(saved[0].read_text())["error"], "boom")

    def test_section_is_printed_only_when_verbose(self):
        out = io.StringIO()
        with redirect_stdout(out):
            DebugLogger(self.settings).log_section("Nested cross-validation: toy_knn_classifier")
        self.assertIn("Nested cross-validation: toy_knn_classifier", out.getvalue())

        self.settings["debug"]["enabled"] = False
        quiet = io.StringIO()
        with redirect_stdout(quiet):
            DebugLogger(self.settings).log_section("hidden")
        self.assertEqual(quiet.getvalue(), "")

    def test_disabled_saving_writes_nothing(self):
        self.settings["debug"]["save_intermediate"]["enabled"] = False
        logger = DebugLogger(self.settings)
        logger.save("fcm", "model", {"a": 1})
        self.assertFalse((self.tmp / "intermediate").exists())


if __name__ == '__main__':
    unittest.main()
