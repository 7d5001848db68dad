#!/usr/bin/env python3
"""
Logging Setup for RIRL runs
Console logging, a JSON-lines run log and per-phase performance timings
"""

import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Union

import structlog

CONSOLE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class RunLogConfig:
    """Logging configuration of one CLI run"""

    def __init__(self, out_dir: Optional[Union[str, Path]] = None, level: int = logging.INFO):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.level = level
        self.run_log_file = self.out_dir / "run.log" if self.out_dir is not None else None

    def setup(self) -> logging.Logger:
        """Configure the root logger; replaces any existing handlers"""
        root_logger = logging.getLogger()
        root_logger.setLevel(self.level)
        for handler in root_logger.handlers[:]:
            root_logger.removeHandler(handler)
            handler.close()

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(self.level)
        console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
        root_logger.addHandler(console_handler)

        if self.run_log_file is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(self.run_log_file, encoding="utf-8")
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(self._get_json_formatter())
            root_logger.addHandler(file_handler)

        self._configure_third_party_loggers()
        return root_logger

    def _get_json_formatter(self) -> logging.Formatter:
        """structlog renders stdlib records as one JSON object per line"""
        return structlog.stdlib.ProcessorFormatter(
            foreign_pre_chain=[
                structlog.stdlib.add_log_level,
                structlog.stdlib.add_logger_name,
                structlog.processors.TimeStamper(fmt="iso", utc=True),
            ],
            processors=[
                structlog.stdlib.ProcessorFormatter.remove_processors_meta,
                structlog.processors.format_exc_info,
                structlog.processors.JSONRenderer(sort_keys=True),
            ],
        )

    def _configure_third_party_loggers(self):
        """Reduce noise from chatty libraries"""
        for name in ("numpy", "matplotlib", "urllib3"):
            logging.getLogger(name).setLevel(logging.WARNING)


class PerformanceMonitor:
    """Wall-clock timings of run phases, reported through the 'performance' logger"""

    def __init__(self):
        self.metrics: Dict[str, List[float]] = {}
        self.logger = logging.getLogger('performance')

    def record_metric(self, metric_name: str, value: float, unit: str = "s"):
        self.metrics.setdefault(metric_name, []).append(value)
        self.logger.info(f"{metric_name}: {value:.3f}{unit}")

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.record_metric(name, time.perf_counter() - start)

    def get_metric_stats(self, metric_name: str) -> Dict[str, float]:
        values = self.metrics.get(metric_name)
        if not values:
            return {}
        return {'min': min(values), 'max': max(values), 'total': sum(values),
                'count': len(values), 'latest': values[-1]}


def setup_run_logging(out_dir: Optional[Union[str, Path]] = None, verbose: bool = False) -> logging.Logger:
    return RunLogConfig(out_dir, logging.DEBUG if verbose else logging.INFO).setup()
