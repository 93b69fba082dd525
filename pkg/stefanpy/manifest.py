"""Run manifests: resolved configuration plus content hashes of every artifact

Artifacts are recorded inside sub-runs. A sub-run is a transaction on the
ledger: on success its entries are committed, on failure they are rolled back
and the partial files deleted, so a manifest never lists an artifact that a
failed computation left behind.
"""
import json
import logging
import os
from collections import UserDict
from contextlib import contextmanager
from datetime import datetime, timezone
from hashlib import blake2b
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

from . import __version__

log = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


class TransactionNeverStartedException(Exception):
    """Commit or rollback without an open sub-run"""
    pass


class TransactionAlreadyOpenException(Exception):
    """Sub-runs do not nest"""
    pass


def content_hash(path: Union[str, Path]) -> str:
    h = blake2b(digest_size=32)
    with Path(path).open('rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            h.update(chunk)
    return h.hexdigest()


class ArtifactLedger(UserDict):
    """Relative artifact path -> content hash, with pending entries kept apart until commit"""

    def __init__(self, root: Union[str, Path]):
        super().__init__()
        self.root: Path = Path(root)
        self._pending: Dict[str, str] = dict()
        self._open: Optional[str] = None

    @property
    def in_transaction(self) -> bool:
        return self._open is not None

    def __getitem__(self, key: str) -> str:
        if key in self._pending:
            return self._pending[key]
        return self.data[key]

    def __contains__(self, key) -> bool:
        return key in self._pending or key in self.data

    def __iter__(self):
        return iter(sorted(set(self.data) | set(self._pending)))

    def __len__(self):
        return len(set(self.data) | set(self._pending))

    def start_transaction(self, name: str):
        if self._open is not None:
            raise TransactionAlreadyOpenException(f"sub-run {self._open!r} is still open")
        self._open = name

    def record(self, path: Union[str, Path]) -> str:
        path = Path(path)
        key = path.resolve().relative_to(self.root.resolve()).as_posix()
        digest = content_hash(path)
        if self._open is not None:
            self._pending[key] = digest
        else:
            self.data[key] = digest
        return digest

    def commit(self):
        if self._open is None:
            raise TransactionNeverStartedException()
        self.data.update(self._pending)
        self._pending.clear()
        self._open = None

    def rollback(self):
        if self._open is None:
            raise TransactionNeverStartedException()
        for key in self._pending:
            if key not in self.data:
                (self.root / key).unlink(missing_ok=True)
        self._pending.clear()
        self._open = None


def manifest_timestamp() -> str:
    """UTC ISO timestamp, pinned by SOURCE_DATE_EPOCH when set"""
    epoch = os.environ.get('SOURCE_DATE_EPOCH')
    if epoch is not None:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        moment = datetime.now(tz=timezone.utc)
    return moment.replace(microsecond=0).isoformat()


class RunManifest:
    def __init__(self, root: Union[str, Path], command: str, config: Dict[str, Any],
                 extra: Optional[Dict[str, Any]] = None):
        self.root: Path = Path(root)
        self.command: str = command
        self.config: Dict[str, Any] = config
        self.extra: Dict[str, Any] = dict(extra or {})
        self.timestamp: str = manifest_timestamp()
        self.ledger: ArtifactLedger = ArtifactLedger(self.root)
        self.status: Dict[str, str] = dict()

    @contextmanager
    def subrun(self, name: str) -> Iterator['RunManifest']:
        self.ledger.start_transaction(name)
        self.status[name] = 'running'
        try:
            yield self
        except BaseException:
            self.ledger.rollback()
            self.status[name] = 'failed'
            log.warning("sub-run %s failed, partial artifacts removed", name)
            raise
        else:
            self.ledger.commit()
            self.status[name] = 'complete'

    def record(self, paths: Union[str, Path, List[Union[str, Path]]]):
        if isinstance(paths, (str, Path)):
            paths = [paths]
        for path in paths:
            self.ledger.record(path)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'tool_version': __version__,
            'timestamp': self.timestamp,
            'command': self.command,
            'config': self.config,
            'extra': self.extra,
            'artifacts': {key: self.ledger[key] for key in self.ledger},
            'status': dict(sorted(self.status.items())),
        }

    def write(self) -> Path:
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2))
        return path


def read_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    return json.loads(Path(path).read_text())
