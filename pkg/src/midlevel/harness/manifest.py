"""Run manifests: config echo plus sha256 of every artifact a command wrote."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@lru_cache(maxsize=1)
def code_version() -> str:
    """Package version plus a digest of the installed sources."""
    from .. import __version__

    root = Path(__file__).resolve().parent.parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return f"{__version__}+src.{h.hexdigest()[:12]}"


@dataclass
class RunManifest:
    command: str
    config: dict
    artifacts: dict = field(default_factory=dict)      # relative path -> sha256
    inputs: dict = field(default_factory=dict)         # absolute path -> sha256
    extra: dict = field(default_factory=dict)
    created: str = ""
    code_version: str = ""

    def add(self, root, path) -> None:
        rel = Path(path).resolve().relative_to(Path(root).resolve()).as_posix()
        self.artifacts[rel] = sha256_file(path)

    def add_input(self, path) -> None:
        self.inputs[str(Path(path).resolve())] = sha256_file(path)

    def write(self, root) -> Path:
        """Stamp and write ``manifest.json``; refuses if any artifact changed meanwhile."""
        self.created = self.created or time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        self.code_version = self.code_version or code_version()
        problems = _check(root, self.artifacts)
        if problems:
            raise RuntimeError("manifest does not match files on disk: " + "; ".join(problems))
        path = Path(root) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, root) -> "RunManifest":
        path = Path(root) / MANIFEST_NAME
        if not path.exists():
            raise FileNotFoundError(f"no {MANIFEST_NAME} in {root}")
        return cls(**json.loads(path.read_text(encoding="utf-8")))


def _check(root, artifacts: dict) -> list[str]:
    problems = []
    for rel, digest in sorted(artifacts.items()):
        p = Path(root) / rel
        if not p.exists():
            problems.append(f"{rel}: missing")
        elif sha256_file(p) != digest:
            problems.append(f"{rel}: hash mismatch")
    return problems


def verify_manifest(root, manifest: Optional[RunManifest] = None) -> list[str]:
    """Problems found re-hashing the artifacts; empty when everything verifies."""
    m = manifest or RunManifest.read(root)
    return _check(root, m.artifacts)
