import hashlib
import json
from datetime import datetime
from pathlib import Path

import numpy as np


def parse_complex(value) -> complex:
    """Config complex numbers are [re, im] pairs or bare reals"""
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ValueError(f"complex value must be [re, im], got {value}")
        return complex(float(value[0]), float(value[1]))
    return complex(float(value))


def complex_pair(value: complex) -> list[float]:
    value = complex(value)
    return [value.real, value.imag]


def to_jsonable(o):
    if isinstance(o, (complex, np.complexfloating)):
        return complex_pair(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return [to_jsonable(x) for x in o.tolist()]
    if isinstance(o, datetime):
        return o.isoformat()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"non-serializable: {type(o).__name__}")


def _plain(data):
    # json.dumps never hands complex values to `default`, so convert them first
    if isinstance(data, dict):
        return {str(key): _plain(value) for key, value in data.items()}
    if isinstance(data, (list, tuple)):
        return [_plain(value) for value in data]
    if isinstance(data, (complex, np.generic, np.ndarray, datetime, Path)):
        return _plain(to_jsonable(data))
    return data


def to_json(data, indent=2) -> str:
    """Convert results (numpy scalars/arrays, complex numbers included) to a JSON string."""
    return json.dumps(_plain(data), indent=indent, ensure_ascii=False, sort_keys=True, default=to_jsonable)


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
