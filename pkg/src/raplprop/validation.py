"""JSON-schema validation of the documents the tool reads and writes."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema
from referencing import Registry, Resource

from .errors import SchemaError

SCHEMA_NAMES = ("run-report", "suite-report", "profile", "ep-report")


@lru_cache(maxsize=None)
def _registry() -> Registry:
    root = resources.files("raplprop").joinpath("schemas")
    pairs = []
    for name in SCHEMA_NAMES:
        doc = json.loads(root.joinpath(f"{name}.schema.json").read_text())
        pairs.append((doc["$id"], Resource.from_contents(doc)))
    return Registry().with_resources(pairs)


def schema(name: str) -> dict:
    return _registry().contents(f"{name}.schema.json")


def validate(doc, name: str) -> None:
    """Raise :class:`SchemaError` naming the first offending field."""
    cls = jsonschema.validators.validator_for(schema(name))
    validator = cls(schema(name), registry=_registry())
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        parts = [str(p) for p in error.absolute_path]
        if error.validator == "required" and isinstance(error.instance, dict):
            parts += [next(k for k in error.validator_value if k not in error.instance)]
        path = ".".join(parts) or "<root>"
        raise SchemaError(f"{name} document invalid at {path}: {error.message}", field=path)
