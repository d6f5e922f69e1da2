"""Stage timing, structured debug output and intermediate saves for pipeline runs."""
import json
import logging
import sys
import time
import traceback
from datetime import datetime, timezone
from functools import wraps
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

# State keys too large to echo
BULKY_KEYS = {"datasets", "kb_sources", "synthetic", "kb", "runs", "models", "metafeatures", "estimates", "reports", "abstention", "attributions", "sweeps", "final_report"}


def configure_logging(level: str = "INFO", fmt: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s", log_file: Optional[str] = None):
    """Configure the root logger once per process."""
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    formatter = logging.Formatter(fmt)
    for handler in handlers:
        handler.setFormatter(formatter)
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), handlers=handlers, force=True)


class DebugLogger:
    """Per-stage timings and detail output for one pipeline run."""

    def __init__(self, config: Dict[str, Any], verbose: bool = False):
        self.config = config.get("debug", {})
        self.verbose = verbose or self.config.get("enabled", False)
        self.stage_timings: Dict[str, Dict[str, float]] = {}
        self.stage_count = 0
        self.start_time = time.time()

        outputs = self.config.get("outputs", {})
        configure_logging(
            self.config.get("level", "INFO"),
            log_file=outputs.get("file_path") if outputs.get("file") else None,
        )
        self.logger = logging.getLogger("DebugLogger")

        if self.config.get("save_intermediate", {}).get("enabled"):
            Path(self.config["save_intermediate"]["path"]).mkdir(parents=True, exist_ok=True)

    def stage_start(self, stage_name: str):
        self.stage_count += 1
        self.stage_timings[stage_name] = {"start": time.time()}
        if not self.verbose:
            return
        elapsed = time.time() - self.start_time
        print(f"\n{'=' * 80}")
        print(f"STAGE {self.stage_count}: {stage_name} [START]  (elapsed {elapsed:.2f}s)")
        print(f"{'=' * 80}")
        self.logger.info(f"Stage {self.stage_count} START: {stage_name}")

    def stage_end(self, stage_name: str, status: str = "SUCCESS"):
        timing = self.stage_timings.get(stage_name)
        if timing is not None:
            timing["end"] = time.time()
            timing["duration"] = timing["end"] - timing["start"]
        if not self.verbose:
            return
        duration = (timing or {}).get("duration", 0.0)
        print(f"{stage_name} [{status}] in {duration:.2f}s")
        self.logger.info(f"Stage {self.stage_count} {status}: {stage_name} (Duration: {duration:.2f}s)")

    def log_state(self, stage_name: str, state: Dict[str, Any]):
        if not self.config.get("log_state"):
            return
        self.logger.debug(f"State after {stage_name}:")
        summary = {k: v for k, v in state.items() if k not in BULKY_KEYS and not k.startswith("_") and v is not None}
        for key, value in summary.items():
            if isinstance(value, (str, int, float, bool)):
                self.logger.debug(f"  {key}: {value}")
            elif isinstance(value, (list, dict)):
                self.logger.debug(f"  {key}: {type(value).__name__} of {len(value)}")
        if self.config.get("save_intermediate", {}).get("enabled"):
            self._save_intermediate(stage_name, "state", summary)

    def log_data(self, title: str, data: Dict[str, Any]):
        if not self.verbose:
            return
        print(f"\n   {title}:")
        for key, value in data.items():
            if isinstance(value, (list, dict)):
                print(f"      - {key}: {type(value).__name__} with {len(value)} items")
            else:
                print(f"      - {key}: {value}")
        self.logger.debug(f"{title}: {json.dumps(data, default=_jsonable, indent=2)}")

    def log_detail(self, key: str, value: Any):
        if not self.verbose:
            return
        print(f"   {key}: {value}")
        self.logger.debug(f"{key}: {value}")

    def log_section(self, title: str):
        if not self.verbose:
            return
        print(f"\n   {'-' * 70}")
        print(f"   {title}")
        print(f"   {'-' * 70}")
        self.logger.debug(f"=== {title} ===")

    def log_error(self, error: Exception, context: str = ""):
        """Log error with full traceback."""
        error_msg = str(error)
        error_trace = traceback.format_exc()
        self.logger.error(f"Error in {context}: {error_msg}")
        if self.config.get("log_errors_full"):
            self.logger.error(f"Full traceback:\n{error_trace}")
        if self.verbose:
            print(f"\n   ERROR in {context}: {error_msg}")
        if self.config.get("save_intermediate", {}).get("enabled"):
            self._save_intermediate("errors", context or "unknown", {"error": error_msg, "traceback": error_trace, "context": context})

    def save(self, category: str, name: str, data: Any):
        """Intermediate result of a stage, when saving is enabled."""
        if self.config.get("save_intermediate", {}).get("enabled"):
            self._save_intermediate(category, name, data)

    def _save_intermediate(self, category: str, name: str, data: Any):
        try:
            settings = self.config["save_intermediate"]
            category_path = Path(settings["path"]) / category
            category_path.mkdir(parents=True, exist_ok=True)
            stamp = datetime.now(timezone.utc).strftime("%Y%m%d_%H%M%S")
            formats = settings.get("formats", ["json"])
            if "json" in formats:
                with open(category_path / f"{name}_{stamp}.json", "w", encoding="utf-8") as f:
                    json.dump(data, f, indent=2, default=_jsonable)
            if "txt" in formats:
                with open(category_path / f"{name}_{stamp}.txt", "w", encoding="utf-8") as f:
                    if isinstance(data, dict):
                        for key, value in data.items():
                            f.write(f"{key}:\n{value}\n\n")
                    else:
                        f.write(str(data))
        except Exception as e:
            self.logger.warning(f"Failed to save intermediate data: {e}")

    def summary(self):
        total = time.time() - self.start_time
        print(f"\n{'=' * 80}")
        print("EXECUTION SUMMARY")
        print(f"{'=' * 80}")
        print(f"   Total Time: {total:.2f}s")
        print(f"   Stages: {self.stage_count}")
        for stage, timing in self.stage_timings.items():
            duration = timing.get("duration", 0.0)
            share = duration / total * 100 if total > 0 else 0.0
            print(f"      - {stage}: {duration:.2f}s ({share:.1f}%)")
        print(f"{'=' * 80}\n")
        self.logger.info(f"Execution complete. Total time: {total:.2f}s")


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


def debug_stage(stage_name: str):
    """Wrap a node ``fn(state, config)`` with stage timing and error logging."""

    def decorator(func):
        @wraps(func)
        def wrapper(state, config):
            debug_logger = state.get("_debug_logger")
            if debug_logger is None:
                return func(state, config)
            debug_logger.stage_start(stage_name)
            result = func(state, config)
            debug_logger.log_state(stage_name, {**state, **result})
            status = "ERROR" if result.get("workflow_status") == "error" else "SUCCESS"
            debug_logger.stage_end(stage_name, status)
            return result

        return wrapper

    return decorator
