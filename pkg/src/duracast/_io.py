"""Deterministic file output helpers.

All artifacts are written atomically (temporary file in the target directory,
then rename) and floats are printed with 17 significant digits so that the
decimal text round-trips to the exact same IEEE double.
"""

import os
import tempfile

from .errors import IoError


def fmt_float(x):
    """Format a float so the printed text parses back bit-exact."""
    return "%.17g" % float(x)


def atomic_write_text(path, text):
    """Write text to path via a same-directory temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-duracast-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError("cannot write %s: %s" % (path, exc)) from exc


def read_text(path):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError("cannot read %s: %s" % (path, exc)) from exc
