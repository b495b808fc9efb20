"""Output tables: CSV body with a single JSON metadata header line.

Every artifact carries its full config echo, config hash, master seed,
per-chain seeds and code version in the header line, so any number in the
file can be reproduced.  Writes go to a temp file and are renamed into
place, so a failed experiment never corrupts completed outputs.  Numbers
are serialized with repr for lossless round trips; no timestamps are
embedded, so reruns of the same config are byte-identical.
"""

import hashlib
import json
import os
from pathlib import Path


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(float(x))  # plain repr even for numpy scalars
    return str(x)


def write_table(path, metadata: dict, header, rows):
    """Atomically write a metadata line plus CSV header and rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(json.dumps(metadata, sort_keys=True) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    os.replace(tmp, path)
    return path


def read_table(path):
    """Read back (metadata, column dict) from a table file."""
    with open(path) as fh:
        metadata = json.loads(fh.readline())
        header = fh.readline().strip().split(",")
        cols = {h: [] for h in header}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            for h, tok in zip(header, line.split(",")):
                try:
                    val = int(tok)
                except ValueError:
                    try:
                        val = float(tok)
                    except ValueError:
                        val = tok
                cols[h].append(val)
    return metadata, cols


def write_json(path, payload: dict):
    """Atomically write a JSON artifact (loop polylines, summaries)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
