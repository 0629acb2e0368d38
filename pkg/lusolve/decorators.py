import functools
import inspect

import structlog
logger = structlog.get_logger()


def refine_on(errors, attempts=3, factor=2, keys=("grid_u", "grid_v"), max_value=1024):
    """Retry a grid-based search with its grid keyword arguments multiplied by `factor`.

    The wrapped function must accept every name in `keys` as a keyword argument
    with an integer default. Each failed attempt is logged; the last error is re-raised.
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            last_exception = None
            for attempt in range(attempts):
                try:
                    return func(*args, **kwargs)
                except errors as e:
                    last_exception = e
                    refined = {}
                    for key in keys:
                        current = kwargs.get(key)
                        if current is None:
                            current = _default_of(func, key)
                        refined[key] = min(int(current) * factor, max_value)
                    logger.warning(
                        "Grid search failed, refining",
                        function=func.__name__,
                        attempt=attempt + 1,
                        error=str(e),
                        **refined,
                    )
                    kwargs.update(refined)
            logger.error("Grid search failed after refinement", function=func.__name__, attempts=attempts)
            raise last_exception
        return wrapper
    return decorator


def _default_of(func, key):
    param = inspect.signature(func).parameters.get(key)
    if param is None or param.default is inspect.Parameter.empty:
        raise TypeError(f"{func.__name__} has no default for {key!r}")
    return param.default
