"""Run manifests: every CLI output file gets a sibling record of how it was made."""

from __future__ import annotations

import datetime
import hashlib
import json
import os


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command: str, parameters: dict, seed=None, inputs=None):
        from . import __version__

        self.data = {
            "command": command,
            "parameters": parameters,
            "seed": seed,
            "tool_version": __version__,
            "inputs": {p: file_digest(p) for p in (inputs or [])},
            "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "finished_at": None,
        }

    def finish(self) -> dict:
        self.data["finished_at"] = datetime.datetime.now(
            datetime.timezone.utc
        ).isoformat()
        return self.data

    def write_sibling(self, output_path: str) -> str:
        """Write <output>.manifest.json next to the output file."""
        self.finish()
        path = output_path + ".manifest.json"
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    def reference(self, output_path: str) -> dict:
        return {"manifest": os.path.basename(output_path) + ".manifest.json"}
