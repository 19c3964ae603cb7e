"""Line-delimited JSON dataset manifests.

The first line is a header record carrying the format name and version; every
following line is one sample or one skip record. Paths are stored relative to
the manifest's own directory so an output tree can be moved as a whole.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import DuplicateId

FORMAT = "restyling-manifest"
VERSION = 1


class Role(str, enum.Enum):
    SOURCE = "SOURCE"
    STYLE = "STYLE"
    RESTYLED = "RESTYLED"


@dataclass(frozen=True)
class Sample:
    id: str
    path: str
    role: Role
    label_path: Optional[str] = None
    provenance: Optional[dict] = None
    digest: Optional[str] = None  # restyle task digest
    sha256: Optional[str] = None  # output file content hash

    def to_record(self) -> dict:
        rec = {"kind": "sample", "id": self.id, "path": self.path, "role": self.role.value}
        for key in ("label_path", "provenance", "digest", "sha256"):
            value = getattr(self, key)
            if value is not None:
                rec[key] = value
        return rec


@dataclass(frozen=True)
class Skip:
    id: str
    path: str
    reason: str

    def to_record(self) -> dict:
        return {"kind": "skip", "id": self.id, "path": self.path, "reason": self.reason}


@dataclass
class DatasetManifest:
    samples: list[Sample] = field(default_factory=list)
    skipped: list[Skip] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise DuplicateId(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def with_role(self, role) -> list[Sample]:
        role = Role(role)
        return [s for s in self.samples if s.role is role]

    def resolve(self, path: str) -> Path:
        return Path(self.base_dir) / path

    def rebased(self, new_base) -> "DatasetManifest":
        """Copy whose relative paths point at the same files from ``new_base``."""
        new_base = Path(new_base)

        def move(p):
            if p is None:
                return None
            return Path(os.path.relpath(self.resolve(p), new_base)).as_posix()

        samples = [replace(s, path=move(s.path), label_path=move(s.label_path)) for s in self.samples]
        skipped = [replace(k, path=move(k.path)) for k in self.skipped]
        return DatasetManifest(samples, skipped, dict(self.meta), new_base)


def _dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def format_manifest(manifest: DatasetManifest) -> str:
    header = {"kind": "header", "format": FORMAT, "version": VERSION, **manifest.meta}
    lines = [_dumps(header)]
    lines += [_dumps(s.to_record()) for s in manifest.samples]
    lines += [_dumps(k.to_record()) for k in manifest.skipped]
    return "\n".join(lines) + "\n"


def write_manifest(manifest: DatasetManifest, path) -> DatasetManifest:
    """Write ``manifest`` with paths made relative to the file's directory."""
    path = Path(path)
    rebased = manifest.rebased(path.parent.resolve())
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_manifest(rebased))
    os.replace(tmp, path)
    return rebased


def parse_manifest(text: str, base_dir=".") -> DatasetManifest:
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise ValueError("empty manifest")
    header = json.loads(lines[0])
    if header.get("kind") != "header" or header.get("format") != FORMAT:
        raise ValueError("missing manifest header")
    if header.get("version") != VERSION:
        raise ValueError(f"unsupported manifest version {header.get('version')!r}")
    meta = {k: v for k, v in header.items() if k not in ("kind", "format", "version")}
    samples, skipped = [], []
    for lineno, line in enumerate(lines[1:], 2):
        rec = json.loads(line)
        kind = rec.pop("kind", None)
        if kind == "sample":
            rec["role"] = Role(rec["role"])
            samples.append(Sample(**rec))
        elif kind == "skip":
            skipped.append(Skip(**rec))
        else:
            raise ValueError(f"line {lineno}: unknown record kind {kind!r}")
    return DatasetManifest(samples, skipped, meta, Path(base_dir))


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_manifest(fh.read(), path.parent.resolve())
