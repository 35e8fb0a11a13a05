from typing import Any, Dict, TypeVar

from pydantic import BaseModel

Model = TypeVar("Model", bound=BaseModel)


def update_partially(target: Model, updates: Dict[str, Any]) -> Model:
    """Return a validated copy of `target` with the non-None `updates` applied.

    Dotted keys reach into nested models: {"corruption.p": 0.2}.
    """
    data = target.model_dump()
    for key, value in updates.items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for parent in parents:
            node = node[parent]
        node[leaf] = value
    return target.__class__.model_validate(data)
