import logging
from functools import wraps
from time import perf_counter
from typing import Any, Callable, TypeVar, cast

logger = logging.getLogger(__name__)

Function = TypeVar("Function", bound=Callable[..., Any])


def timing(f: Function) -> Function:
    @wraps(f)
    def wrap(*args: Any, **kwargs: Any) -> Any:
        ts = perf_counter()
        result = f(*args, **kwargs)
        logger.debug(f"func:{f.__name__} took: {round(perf_counter() - ts, 3)} sec")
        return result

    return cast(Function, wrap)
