"""
Tests for the logging system.

This module tests the logging functionality including:
- LoggingConfig initialization and the log directory override
- Logger retrieval and the console level
- Exception logging into the error log
- The decorators used on long-running toolkit operations
"""

import logging
import time

import numpy as np
import pytest

from errors import ValidationFailure
from logging_config import LoggingConfig, get_logger, log_exception, set_console_level
from logging_decorators import _describe, log_exceptions, log_function_calls, log_performance


def read_logs(pattern: str) -> str:
    """Concatenated content of every log file matching ``pattern``."""
    return "".join(p.read_text(encoding="utf-8") for p in LoggingConfig().log_dir.glob(pattern))


class TestLoggingConfig:
    """Test LoggingConfig class functionality."""

    def test_singleton_pattern(self):
        """Test that LoggingConfig follows singleton pattern."""
        assert LoggingConfig() is LoggingConfig()

    def test_log_directory_from_environment(self):
        """Test that the log directory comes from NRBM_LOG_DIR and exists."""
        config = LoggingConfig()
        assert config.log_dir.is_dir()
        assert config.log_dir.name == "logs"

    def test_logger_retrieval(self):
        """Test that the same name gives the same logger."""
        config = LoggingConfig()
        assert config.get_logger("substrate_sim") is config.get_logger("substrate_sim")
        assert config.get_logger("substrate_sim") is not config.get_logger("compiler")

    def test_specialized_loggers_exist(self):
        """Test the application, performance and error loggers."""
        config = LoggingConfig()
        assert config.app_logger.name == "neuro_rbm"
        assert config.performance_logger.name == "performance"
        assert config.error_logger.name == "errors"

    def test_console_level(self):
        """Test that the console level can be raised and that None leaves it alone."""
        config = LoggingConfig()
        try:
            set_console_level("WARNING")
            assert config.console_handler.level == logging.WARNING
            set_console_level(None)
            assert config.console_handler.level == logging.WARNING
        finally:
            set_console_level("INFO")


class TestExceptionLogging:
    """Test exception logging into the error log."""

    def test_log_exception_reaches_error_log(self):
        """Test that a logged exception lands in the error log with its context."""
        logger = get_logger("test_exception")
        try:
            raise ValidationFailure("1 violation", ["core 0 neuron 1: leak 4000 outside 9-bit range"])
        except ValidationFailure as e:
            log_exception(logger, e, "Validating network.json")
        content = read_logs("errors_*.log")
        assert "Validating network.json" in content
        assert "ValidationFailure" in content

    def test_log_exceptions_decorator_reraises(self):
        """Test that the decorator logs and re-raises by default."""
        @log_exceptions("Compile failed")
        def failing():
            raise RuntimeError("no core can hold 300 axons")

        with pytest.raises(RuntimeError, match="300 axons"):
            failing()
        assert "Compile failed" in read_logs("errors_*.log")

    def test_log_exceptions_without_reraise(self):
        """Test that the decorator can swallow the exception and return None."""
        @log_exceptions("Optional export failed", reraise=False)
        def failing():
            raise OSError("disk full")

        assert failing() is None

    def test_log_exceptions_success(self):
        """Test that successful calls pass through unchanged."""
        @log_exceptions("Should not log")
        def succeeding():
            return 42

        assert succeeding() == 42


class TestFunctionCallLogging:
    """Test the log_function_calls decorator."""

    def test_arrays_are_summarised(self):
        """Test that array arguments are logged by shape and dtype."""
        assert _describe(np.zeros((784, 529), dtype=np.int16)) == "<array shape=(784, 529) dtype=int16>"
        assert _describe("x" * 500).endswith("...")
        assert len(_describe("x" * 500)) == 200

    def test_call_is_logged(self):
        """Test that entry parameters reach the application log."""
        @log_function_calls(include_params=True, include_result=True)
        def quantize_stub(weights, s=50):
            return int(np.round(weights * s).sum())

        assert quantize_stub(np.full((3, 2), 0.1), s=10) == 6
        content = read_logs("app_*.log")
        assert "quantize_stub" in content
        assert "<array shape=(3, 2) dtype=float64>" in content

    def test_exception_propagates(self):
        """Test that a failing decorated function still raises."""
        @log_function_calls()
        def failing():
            raise ValueError("bad T_A")

        with pytest.raises(ValueError, match="bad T_A"):
            failing()


class TestPerformanceLogging:
    """Test the log_performance decorator."""

    def test_slow_call_is_timed(self):
        """Test that a call above the threshold reaches the performance log."""
        @log_performance(threshold_seconds=0.05, log_level="INFO")
        def slow_fit():
            time.sleep(0.1)
            return "fitted"

        assert slow_fit() == "fitted"
        assert "slow_fit" in read_logs("performance_*.log")

    def test_fast_call(self):
        """Test that a fast call returns normally."""
        @log_performance(threshold_seconds=1.0)
        def fast():
            return "fast"

        assert fast() == "fast"

    def test_exception_propagates(self):
        """Test that timing does not swallow exceptions."""
        @log_performance(threshold_seconds=0.0)
        def failing():
            raise ValueError("sweep failed")

        with pytest.raises(ValueError, match="sweep failed"):
            failing()

    def test_stacked_decorators(self):
        """Test the decorator stack used on CLI commands."""
        @log_performance(threshold_seconds=30.0)
        @log_exceptions("Command failed")
        def command(n):
            if n < 0:
                raise ValueError("negative period count")
            return n * 2

        assert command(3) == 6
        with pytest.raises(ValueError):
            command(-1)
