"""
Repository for evicted branches.

Each record carries the serialized subtree plus the touch keys computed from
its frontier at eviction time. The touch index (key -> branch ids) lives in
memory and is rebuilt from the store when the repository is opened.
"""

import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

from src.core.errors import CorruptRecordError, StoreWriteError
from src.core.state import TreeNode
from src.db.branch_store import BranchStore
from src.utils.log_utils import get_logger

logger = get_logger(__name__)

RECORD_VERSION = 1


@dataclass
class EvictedBranchRecord:
    branch_id: str
    query_id: str
    root: TreeNode
    touch_keys: set[str]
    evicted_at: int

    def to_json(self) -> bytes:
        data = {
            "version": RECORD_VERSION,
            "branch_id": self.branch_id,
            "query_id": self.query_id,
            "evicted_at": self.evicted_at,
            "touch_keys": sorted(self.touch_keys),
            "tree": self.root.to_dict(),
        }
        return json.dumps(data, ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_json(cls, raw: bytes) -> "EvictedBranchRecord":
        data = json.loads(raw.decode("utf-8"))
        if data.get("version") != RECORD_VERSION:
            raise ValueError(f"unsupported record version {data.get('version')}")
        return cls(
            branch_id=data["branch_id"],
            query_id=data["query_id"],
            root=TreeNode.from_dict(data["tree"]),
            touch_keys=set(data["touch_keys"]),
            evicted_at=int(data["evicted_at"]),
        )


class BranchRepository:
    """Save, match and load evicted branches; storage failures come back as (ok, message)."""

    def __init__(self, store: BranchStore):
        self.store = store
        self.index: dict[str, set[str]] = defaultdict(set)
        self._keys_of: dict[str, set[str]] = {}
        # regions the store skipped while opening count as quarantined records
        self.quarantined = store.damaged_regions
        self._rebuild_index()

    def _rebuild_index(self) -> None:
        for branch_id in self.store.keys():
            try:
                data = json.loads(self.store.get(branch_id).decode("utf-8"))
                self._index(branch_id, set(data["touch_keys"]))
            except (CorruptRecordError, ValueError, KeyError) as e:
                self.store.quarantine(branch_id, str(e))
                self.quarantined += 1

    def _index(self, branch_id: str, keys: set[str]) -> None:
        self._keys_of[branch_id] = keys
        for key in keys:
            self.index[key].add(branch_id)

    def _unindex(self, branch_id: str) -> None:
        for key in self._keys_of.pop(branch_id, set()):
            ids = self.index.get(key)
            if ids is not None:
                ids.discard(branch_id)
                if not ids:
                    del self.index[key]

    def save(self, record: EvictedBranchRecord) -> Tuple[bool, Optional[str]]:
        try:
            self.store.put(record.branch_id, record.to_json())
        except StoreWriteError as e:
            logger.error(f"Error saving branch {record.branch_id}: {e.message}")
            return False, e.message
        self._unindex(record.branch_id)
        self._index(record.branch_id, record.touch_keys)
        return True, None

    def match(self, keys: Iterable[str]) -> set[str]:
        """Branch ids indexed under any of `keys`."""
        found: set[str] = set()
        for key in keys:
            found |= self.index.get(key, set())
        return found

    def load(self, branch_id: str) -> Tuple[Optional[EvictedBranchRecord], Optional[str]]:
        """Deserialize a record; a bad one is quarantined and reported."""
        if branch_id not in self.store:
            return None, f"Unknown branch {branch_id}"
        try:
            record = EvictedBranchRecord.from_json(self.store.get(branch_id))
        except (CorruptRecordError, ValueError, KeyError, TypeError) as e:
            reason = e.message if isinstance(e, CorruptRecordError) else str(e)
            self._unindex(branch_id)
            self.store.quarantine(branch_id, reason)
            self.quarantined += 1
            return None, reason
        return record, None

    def remove(self, branch_id: str) -> Tuple[bool, Optional[str]]:
        try:
            self.store.delete(branch_id)
        except StoreWriteError as e:
            return False, e.message
        self._unindex(branch_id)
        return True, None

    def __contains__(self, branch_id: str) -> bool:
        return branch_id in self.store

    def __len__(self) -> int:
        return len(self.store)
