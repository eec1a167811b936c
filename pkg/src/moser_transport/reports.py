"""Report serialisation: canonical JSON and full-precision CSV, written atomically."""

import json
import os
import tempfile


def fmt17(value):
    """Full-precision numeral for CSV cells."""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def canonical_json(obj):
    """Stable key order, UTF-8; byte-identical across runs for equal content."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_text_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    write_text_atomic(path, canonical_json(obj))


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt17(v) for v in row))
    write_text_atomic(path, "\n".join(lines) + "\n")
