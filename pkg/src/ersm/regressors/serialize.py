"""JSON model files shared by all regressor kinds."""

import json

from ..errors import ParseError
from .knn import KnnModel
from .linear import LinearModel
from .nn import NnEnsemble

FORMAT = "ersm-model"
VERSION = 1
KINDS = {"linear": LinearModel, "knn": KnnModel, "nn": NnEnsemble}


def model_to_dict(model, metadata=None):
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "params": model.to_dict(),
        "metadata": dict(metadata or {}),
    }


def dumps_model(model, metadata=None):
    # sorted keys and fixed separators keep files byte-identical across runs
    return json.dumps(model_to_dict(model, metadata), sort_keys=True, separators=(",", ":"))


def save_model(model, path, metadata=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model, metadata))
        fh.write("\n")


def loads_model(text, source=None):
    """Return ``(model, metadata)`` from a model file's text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not a model file: {exc}", source=source) from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ParseError("not a model file", source=source)
    if doc.get("version") != VERSION:
        raise ParseError(f"unsupported model version {doc.get('version')!r}", source=source)
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ParseError(f"unknown model kind {kind!r}", source=source)
    try:
        model = KINDS[kind].from_dict(doc["params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed {kind} parameters: {exc}", source=source) from exc
    return model, doc.get("metadata", {})


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read(), source=str(path))
