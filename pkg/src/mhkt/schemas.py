"""JSON schemas and CSV headers for every file the package writes."""

from .data import MANIFEST_SCHEMA
from .experiments import ABLATION_COLUMNS, SWEEP_LONG_COLUMNS

_NUM = {"type": "number"}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["data", "labeled_per_class", "batch_size", "epochs", "lr", "seed", "variant", "tais", "tgkt", "crkt", "weights"],
    "properties": {
        "variant": {"enum": ["mhkt", "target_only", "source_finetune", "mmd_baseline", "coral_baseline"]},
        "batch_size": {"type": "integer", "minimum": 2},
        "epochs": {"type": "integer", "minimum": 0},
        "tais": {"type": "boolean"},
        "tgkt": {"type": "boolean"},
        "crkt": {"type": "boolean"},
        "weights": {
            "type": "object",
            "required": ["lambda1", "lambda2", "alpha", "beta"],
            "properties": {"lambda1": _NUM, "lambda2": _NUM, "alpha": _NUM, "beta": _NUM},
        },
    },
}

METRICS_RECORD_SCHEMA = {
    "type": "object",
    "required": ["epoch", "loss"],
    "properties": {
        "epoch": {"type": "integer", "minimum": 1},
        "loss": {"type": "object", "required": ["total"], "additionalProperties": _NUM},
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "per_class_accuracy": {"type": "array", "items": _NUM},
    },
}

EVAL_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "per_class_accuracy", "confusion"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "per_class_accuracy": {"type": "array", "items": _NUM},
        "confusion": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
    },
}

SC_RECORD_SCHEMA = {
    "type": "object",
    "required": ["class", "centers"],
    "properties": {
        "class": {"type": "integer", "minimum": 0},
        "centers": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "object", "required": ["A", "L", "alpha", "phi", "x", "y", "z", "gamma"]},
        },
    },
}

LABELS_COLUMNS = ["index", "class"]
EMBED_LEADING_COLUMNS = ["domain", "label"]

__all__ = [
    "ABLATION_COLUMNS",
    "CONFIG_SCHEMA",
    "EMBED_LEADING_COLUMNS",
    "EVAL_SCHEMA",
    "LABELS_COLUMNS",
    "MANIFEST_SCHEMA",
    "METRICS_RECORD_SCHEMA",
    "SC_RECORD_SCHEMA",
    "SWEEP_LONG_COLUMNS",
]
