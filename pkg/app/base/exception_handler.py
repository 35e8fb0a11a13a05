import json
import logging
import sys
from typing import Any, Callable, Dict

from app.base.config import DEBUG
from app.base.exceptions import CustomException, ExType

logger = logging.getLogger(__name__)


def handle_custom_exception(exc: CustomException) -> int:
    error_obj: Dict[str, Any] = {
        "code": exc.code.value,
        "detail": exc.detail,
    }
    if exc.field:
        error_obj["field"] = exc.field
    print(json.dumps({"errors": [error_obj]}), file=sys.stderr)
    return exc.exit_code


def catch_exceptions(func: Callable[[], int]) -> int:
    try:
        return func()
    except CustomException as e:
        return handle_custom_exception(e)
    except Exception as e:
        logger.critical(f"Unhandled Error:{e}")
        if DEBUG:
            raise e
        error_obj = {"code": ExType.INTERNAL_ERROR.value, "detail": str(e)}
        print(json.dumps({"errors": [error_obj]}), file=sys.stderr)
        return 2
