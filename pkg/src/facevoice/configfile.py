"""Flat key=value config files: one `key = value` per line, '#' comments.

Values stay strings; callers coerce. Flags given on a command line override
file values, and every run echoes its effective config for provenance.
"""

from pathlib import Path


def parse_kv(path):
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_kv(mapping, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {mapping[k]}" for k in sorted(mapping)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
