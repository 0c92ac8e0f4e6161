import datetime
import logging
import os
from collections import Counter
from typing import Dict, List, Optional

import attr

from .__version__ import __version__
from .config import RunConfig
from .errors import summarize_exception
from .io import write_json
from .utils import canonical_json, sha256_hex

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def file_digest(path: str) -> str:
    with open(path, "rb") as f:
        return sha256_hex(f.read())


@attr.s(auto_attribs=True)
class Manifest:
    """
    Record of one command run: what ran, with which configuration, and
    which files it emitted. Everything except the timestamps is a function
    of the command, configuration and seed.
    """
    command: str
    run_id: str
    config_hash: str
    seed: int
    version: str = __version__
    started_at: str = attr.ib(factory=_now)
    finished_at: Optional[str] = None
    exit_code: Optional[int] = None
    files: Dict[str, str] = attr.ib(factory=dict)
    warnings: Counter = attr.ib(factory=Counter)

    @classmethod
    def start(cls, command: str, config: RunConfig) -> "Manifest":
        run_id = sha256_hex(canonical_json({
            "command": command, "config": config.config_hash, "seed": config.seed,
        }))[:16]
        return cls(command=command, run_id=run_id, config_hash=config.config_hash, seed=config.seed)

    def add_file(self, path: str, out_dir: str):
        relative = os.path.relpath(path, out_dir).replace(os.sep, "/")
        self.files[relative] = file_digest(path)

    def add_files(self, paths: List[str], out_dir: str):
        for path in paths:
            self.add_file(path, out_dir)

    def warn(self, exc_or_key):
        key = exc_or_key if isinstance(exc_or_key, str) else summarize_exception(exc_or_key)
        self.warnings[key] += 1

    @property
    def warning_count(self) -> int:
        return sum(self.warnings.values())

    def finish(self, exit_code: int = 0):
        self.exit_code = exit_code
        self.finished_at = _now()

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "exit_code": self.exit_code,
            "files": [{"path": path, "sha256": self.files[path]} for path in sorted(self.files)],
            "warnings": {"count": self.warning_count, "by_kind": dict(sorted(self.warnings.items()))},
        }

    def write(self, out_dir: str) -> str:
        path = write_json(os.path.join(out_dir, MANIFEST_NAME), self.to_dict())
        logger.info("Manifest written to %s (%i files, %i warnings)", path, len(self.files), self.warning_count)
        return path
