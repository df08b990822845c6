"""
Decorators that put the toolkit's entry points into the logs.

    @log_function_calls(include_result=False)   ENTERING/EXITING lines on the module logger
    @log_performance(threshold_seconds=1.0)     wall time on the 'performance' logger
    @log_exceptions("Network load failed")      traceback into the error log

Arguments are rendered with ``_describe``: weight matrices and spike rasters
show up as shape and dtype, anything else is cut at 200 characters.
"""

import functools
import logging
import time
from typing import Any, Callable, Optional

from logging_config import get_logger, log_exception

MAX_REPR = 200


def _describe(value: Any) -> str:
    """Short repr; numpy arrays are reduced to shape and dtype."""
    shape = getattr(value, "shape", None)
    dtype = getattr(value, "dtype", None)
    if shape is not None and dtype is not None:
        return f"<array shape={tuple(shape)} dtype={dtype}>"
    text = repr(value)
    return text if len(text) <= MAX_REPR else text[:MAX_REPR - 3] + "..."


def _format_params(args, kwargs) -> str:
    rendered = [f"arg{i}={_describe(a)}" for i, a in enumerate(args)]
    rendered += [f"{k}={_describe(v)}" for k, v in kwargs.items()]
    return ', '.join(rendered)


def _qualified(func: Callable) -> str:
    return f"{func.__module__}.{func.__qualname__}"


def _level(name: str) -> int:
    return getattr(logging, name.upper(), logging.INFO)


def _with_params(message: str, args, kwargs, enabled: bool) -> str:
    if enabled and (args or kwargs):
        return f"{message} | Parameters: {_format_params(args, kwargs)}"
    return message


def log_function_calls(include_params: bool = True, include_result: bool = True, log_level: str = "DEBUG"):
    """
    Log entry (with arguments) and exit (with the result) of each call.

    A raising call is logged through ``log_exception`` and re-raised. Meant
    for entry points with few arguments, not for per-tick inner loops.
    """
    level = _level(log_level)

    def decorator(func: Callable) -> Callable:
        logger = get_logger(func.__module__)
        name = _qualified(func)

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            logger.log(level, _with_params(f"ENTERING: {name}", args, kwargs, include_params))
            try:
                result = func(*args, **kwargs)
            except Exception as exc:
                log_exception(logger, exc, f"Function: {name}")
                raise
            logger.log(level, f"EXITING: {name}" + (f" | Result: {_describe(result)}" if include_result else ""))
            return result

        return wrapper
    return decorator


def log_performance(threshold_seconds: float = 0.0, log_level: str = "INFO", include_params: bool = False):
    """
    Time each call on the 'performance' logger.

    Calls shorter than ``threshold_seconds`` are not logged; failures always
    are, at ERROR, with the time spent before the exception.

    Example
    -------
        @log_performance(threshold_seconds=1.0)
        def fit_sampler(...):
            ...
    """
    level = _level(log_level)

    def decorator(func: Callable) -> Callable:
        logger = get_logger('performance')
        name = _qualified(func)

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as exc:
                logger.error(f"PERFORMANCE: {name} | Duration: {time.perf_counter() - start:.4f}s | FAILED: {exc}")
                raise
            elapsed = time.perf_counter() - start
            if elapsed >= threshold_seconds:
                logger.log(level, _with_params(f"PERFORMANCE: {name} | Duration: {elapsed:.4f}s", args, kwargs, include_params))
            return result

        return wrapper
    return decorator


def log_exceptions(context: str = "", reraise: bool = True, log_level: str = "ERROR"):
    """
    Log exceptions escaping the wrapped function.

    Args
    ----
    context: what the function was doing, e.g. "Model load failed"
    reraise: re-raise after logging; otherwise the call returns None
    log_level: ERROR or CRITICAL logs the traceback into the error log;
        lower levels log a single line (used for validation failures,
        which are expected outcomes)
    """
    level = _level(log_level)

    def decorator(func: Callable) -> Callable:
        logger = get_logger(func.__module__)
        where = f"Function: {_qualified(func)}" + (f" | Context: {context}" if context else "")

        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> Optional[Any]:
            try:
                return func(*args, **kwargs)
            except Exception as exc:
                if level >= logging.ERROR:
                    log_exception(logger, exc, where)
                else:
                    logger.log(level, f"{where} | {type(exc).__name__}: {exc}")
                if reraise:
                    raise
                return None

        return wrapper
    return decorator
