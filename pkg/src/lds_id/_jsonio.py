"""JSON writer that prints doubles with 17 significant digits.

The stdlib encoder uses the shortest round-trip repr for floats and does not
expose a hook for the float format, so numbers are rendered here and the
remaining types are delegated to :func:`json.dumps`.
"""

import json
import math

import numpy as np


def format_float(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x!r}")
    s = "%.17g" % x
    # keep floats recognisable as floats when read back
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, out):
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        if math.isfinite(obj):
            out.append(format_float(obj))
        else:
            out.append("null")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), out)
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"object of type {type(obj).__name__} is not JSON serializable")


def dumps(obj):
    """Serialize ``obj`` to a JSON string (single line, 17-digit floats, NaN as null)."""
    out = []
    _encode(obj, out)
    return "".join(out)


def dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
