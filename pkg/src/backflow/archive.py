"""Result persistence: a deterministic zip archive and plain CSV tables.

Archive layout (``format_version`` 1), all members stored uncompressed with a
fixed timestamp so identical content gives identical bytes:

``meta.json``
    ``{"format_version", "kind", "checksum", "arrays", "scalars"}``; the
    checksum is the SHA-256 over the payload members in name order.
``config.json``
    the run configuration.
``arrays/<name>.npy``
    one ``.npy`` blob per array.
``scalars.json``
    JSON scalars and small lists.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class ArchiveError(ValueError):
    pass


@dataclass
class ResultArchive:
    kind: str
    config: dict
    arrays: dict[str, np.ndarray]
    scalars: dict[str, Any]
    format_version: int = FORMAT_VERSION
    checksum: str = ""


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True).encode()


def _payload_members(arrays: Mapping[str, np.ndarray], scalars: Mapping[str, Any]) -> dict[str, bytes]:
    members = {f"arrays/{k}.npy": _npy_bytes(np.asarray(v)) for k, v in arrays.items()}
    members["scalars.json"] = _dumps(dict(scalars))
    return members


def _checksum(members: Mapping[str, bytes]) -> str:
    h = hashlib.sha256()
    for name in sorted(members):
        h.update(name.encode())
        h.update(members[name])
    return h.hexdigest()


def save_archive(path, kind: str, config: Mapping, arrays: Mapping[str, np.ndarray], scalars: Mapping[str, Any]) -> ResultArchive:
    members = _payload_members(arrays, scalars)
    checksum = _checksum(members)
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "checksum": checksum,
        "arrays": sorted(arrays),
        "scalars": sorted(scalars),
    }
    members["meta.json"] = _dumps(meta)
    members["config.json"] = _dumps(dict(config))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(members):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, members[name])
    tmp.replace(path)
    return ResultArchive(kind, dict(config), {k: np.asarray(v) for k, v in arrays.items()}, dict(scalars), FORMAT_VERSION, checksum)


def load_archive(path) -> ResultArchive:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise ArchiveError(f"cannot open archive {path}: {exc}") from exc
    with zf:
        names = set(zf.namelist())
        if "meta.json" not in names:
            raise ArchiveError(f"{path} has no meta.json")
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ArchiveError(f"unsupported format_version {meta.get('format_version')!r}")
        members = {n: zf.read(n) for n in names if n.startswith("arrays/") or n == "scalars.json"}
        config = json.loads(zf.read("config.json"))
    if _checksum(members) != meta["checksum"]:
        raise ArchiveError(f"checksum mismatch in {path}")
    arrays = {
        n[len("arrays/"):-len(".npy")]: np.lib.format.read_array(io.BytesIO(b), allow_pickle=False)
        for n, b in members.items()
        if n.startswith("arrays/")
    }
    scalars = json.loads(members["scalars.json"])
    return ResultArchive(meta["kind"], config, arrays, scalars, meta["format_version"], meta["checksum"])


def write_csv(path, config: Mapping, columns: Mapping[str, np.ndarray]) -> None:
    """Comma-separated columns behind ``#``-prefixed config lines."""
    cols = {k: np.asarray(v).ravel() for k, v in columns.items()}
    lengths = {len(v) for v in cols.values()}
    if len(lengths) != 1:
        raise ValueError("columns must have equal length")
    lines = [f"# {k} = {json.dumps(config[k])}" for k in sorted(config)]
    lines.append(",".join(cols))
    data = np.column_stack(list(cols.values()))
    lines.extend(",".join(f"{x:.17g}" for x in row) for row in data)
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[dict, dict[str, np.ndarray]]:
    config, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition(" = ")
            config[key] = json.loads(val)
        elif header is None:
            header = line.split(",")
        else:
            rows.append([float(x) for x in line.split(",")])
    data = np.array(rows).reshape(-1, len(header))
    return config, {name: data[:, i] for i, name in enumerate(header)}
