"""Run manifest: per-stage artifact names with content hashes.

Stages refuse to consume artifacts whose hash no longer matches the
manifest, and refuse to run when an upstream artifact is missing.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

MANIFEST_NAME = "manifest.json"
_VERSION = "0.1.0"


class MissingArtifactError(Exception):
    pass


class IntegrityError(Exception):
    pass


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, root, data=None):
        self.root = Path(root)
        self.data = data if data is not None else {"config_hash": "", "stages": {}}

    @classmethod
    def load(cls, root):
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.exists():
            return cls(root)
        return cls(root, json.loads(path.read_text()))

    def save(self):
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def record_stage(self, stage, files, config_hash):
        entry = {
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            "version": _VERSION,
            "files": {},
        }
        for f in files:
            rel = str(Path(f).relative_to(self.root))
            entry["files"][rel] = file_sha256(f)
        self.data["stages"][stage] = entry
        self.data["config_hash"] = config_hash
        self.save()

    def stage_files(self, stage):
        if stage not in self.data["stages"]:
            raise MissingArtifactError(f"stage '{stage}' has not produced artifacts yet")
        return self.data["stages"][stage]["files"]

    def verify_stage(self, stage):
        """Check that every artifact the stage recorded still exists with the
        recorded content hash; return the verified paths."""
        files = self.stage_files(stage)
        paths = {}
        for rel, digest in files.items():
            path = self.root / rel
            if not path.exists():
                raise MissingArtifactError(f"missing artifact: {path}")
            if file_sha256(path) != digest:
                raise IntegrityError(f"artifact hash mismatch: {path}")
            paths[rel] = path
        return paths
