"""
Single-file store for evicted branches.

The file is a sequence of frames:

    magic:2 | version:u8 | flags:u8 | key_len:u32 | body_len:u32 | body_crc:u32 | head_crc:u32 | key | body

head_crc covers the sixteen header bytes before it and body_crc covers key and
body, so a damaged length is caught before it is trusted. flags bit 0 marks a
tombstone. Writes always append; the newest frame of a key wins. An in-memory
directory maps each live key to its frame offset and is rebuilt by scanning
the file on open.

A scan that meets bytes which do not form a valid frame skips forward to the
next offset holding one, and the skipped region is copied to the quarantine
file. A damaged tail is cut off; damage in the middle of the file triggers a
compaction so it is reported once. `compact` rewrites the file with live
frames only.
"""

import json
import mmap
import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from src.core.errors import CorruptRecordError, StoreWriteError
from src.utils.fs_utils import remove_file_quietly, replace_file_verified
from src.utils.log_utils import get_logger

logger = get_logger(__name__)

MAGIC = b"PB"
FORMAT_VERSION = 2
HEADER = struct.Struct(">2sBBIII")
HEAD_CRC = struct.Struct(">I")
FRAME_HEAD = HEADER.size + HEAD_CRC.size
FLAG_TOMBSTONE = 0x01


def encode_frame(key: str, body: bytes, *, tombstone: bool = False) -> bytes:
    key_raw = key.encode("utf-8")
    flags = FLAG_TOMBSTONE if tombstone else 0
    header = HEADER.pack(MAGIC, FORMAT_VERSION, flags, len(key_raw), len(body), zlib.crc32(key_raw + body))
    return header + HEAD_CRC.pack(zlib.crc32(header)) + key_raw + body


@dataclass(frozen=True)
class Frame:
    offset: int
    length: int
    version: int
    flags: int
    key: str
    body: bytes
    intact: bool

    @property
    def tombstone(self) -> bool:
        return bool(self.flags & FLAG_TOMBSTONE)


@dataclass(frozen=True)
class DamagedRegion:
    offset: int
    length: int


def decode_frame(buf, pos: int = 0) -> Optional[Frame]:
    """Frame starting at `pos`, or None when its header is invalid or it runs past the end."""
    if pos + FRAME_HEAD > len(buf):
        return None
    header = bytes(buf[pos : pos + HEADER.size])
    magic, version, flags, key_len, body_len, body_crc = HEADER.unpack(header)
    if magic != MAGIC:
        return None
    (head_crc,) = HEAD_CRC.unpack(bytes(buf[pos + HEADER.size : pos + FRAME_HEAD]))
    if zlib.crc32(header) != head_crc:
        return None
    end = pos + FRAME_HEAD + key_len + body_len
    if end > len(buf):
        return None
    payload = bytes(buf[pos + FRAME_HEAD : end])
    return Frame(
        offset=pos,
        length=end - pos,
        version=version,
        flags=flags,
        key=payload[:key_len].decode("utf-8", errors="replace"),
        body=payload[key_len:],
        intact=zlib.crc32(payload) == body_crc,
    )


def _resync(buf, start: int) -> Optional[int]:
    """Offset of the next intact frame at or after `start`."""
    pos = buf.find(MAGIC, start)
    while pos != -1:
        frame = decode_frame(buf, pos)
        if frame is not None and frame.intact:
            return pos
        pos = buf.find(MAGIC, pos + 1)
    return None


def walk_frames(buf) -> list[Frame | DamagedRegion]:
    """Frames in file order, with every unreadable stretch reported as one region."""
    items: list[Frame | DamagedRegion] = []
    pos, size = 0, len(buf)
    while pos < size:
        frame = decode_frame(buf, pos)
        if frame is not None:
            items.append(frame)
            pos += frame.length
            continue
        nxt = _resync(buf, pos + 1)
        end = size if nxt is None else nxt
        items.append(DamagedRegion(pos, end - pos))
        pos = end
    return items


@dataclass
class BranchStore:
    path: Path
    fsync: bool = False
    directory: dict[str, tuple[int, int]] = field(default_factory=dict)
    tombstones: int = 0
    damaged_regions: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.path = Path(self.path)
        if self.path.exists():
            logger.info(f"Branch store exists at {self.path}, rebuilding directory...")
            damaged = self._scan()
            if damaged:
                self._repair(damaged)
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
            logger.info(f"Branch store created at {self.path}")

    @property
    def quarantine_path(self) -> Path:
        return self.path.with_name(self.path.name + ".quarantine")

    # -------------------- Reading --------------------

    def _walk(self) -> list[Frame | DamagedRegion]:
        with open(self.path, "rb") as fh:
            if os.fstat(fh.fileno()).st_size == 0:
                return []
            with mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ) as buf:
                return walk_frames(buf)

    def _scan(self) -> list[DamagedRegion]:
        self.directory.clear()
        self.tombstones = 0
        damaged: list[DamagedRegion] = []
        for item in self._walk():
            if isinstance(item, DamagedRegion):
                damaged.append(item)
            elif item.tombstone:
                self.directory.pop(item.key, None)
                self.tombstones += 1
            else:
                self.directory[item.key] = (item.offset, item.length)
        logger.info(f"Branch store: {len(self.directory)} live records, {self.tombstones} tombstones")
        return damaged

    def _read_at(self, offset: int, length: int) -> bytes:
        with open(self.path, "rb") as fh:
            fh.seek(offset)
            return fh.read(length)

    def _repair(self, damaged: list[DamagedRegion]) -> None:
        size = self.path.stat().st_size
        for region in damaged:
            raw = self._read_at(region.offset, region.length)
            self._write_quarantine(
                {"key": None, "offset": region.offset, "length": region.length, "reason": "unreadable frame bytes"},
                raw,
            )
            logger.warning(f"Skipped {region.length} unreadable bytes at offset {region.offset} in {self.path}")
        self.damaged_regions += len(damaged)

        if any(region.offset + region.length < size for region in damaged):
            self.compact()
            return
        # only a torn tail
        try:
            os.truncate(self.path, damaged[-1].offset)
        except OSError as e:
            raise StoreWriteError(f"Cannot truncate {self.path}: {e}", path=str(self.path)) from e

    def get(self, key: str) -> bytes:
        """Body of the live record for `key`; raises KeyError or CorruptRecordError."""
        with self._lock:
            offset, frame_len = self.directory[key]
            raw = self._read_at(offset, frame_len)

        frame = decode_frame(raw)
        if frame is None or frame.length != len(raw):
            raise CorruptRecordError(f"Record '{key}' has a damaged header", key=key)
        if frame.version != FORMAT_VERSION:
            raise CorruptRecordError(f"Record '{key}' has unknown version {frame.version}", key=key)
        if not frame.intact:
            raise CorruptRecordError(f"Record '{key}' failed its checksum", key=key)
        return frame.body

    def raw(self, key: str) -> bytes:
        """Frame bytes as stored, for quarantine reports."""
        offset, frame_len = self.directory[key]
        return self._read_at(offset, frame_len)

    def keys(self) -> list[str]:
        return list(self.directory)

    def __contains__(self, key: str) -> bool:
        return key in self.directory

    def __len__(self) -> int:
        return len(self.directory)

    # -------------------- Writing --------------------

    def _append(self, frame: bytes) -> int:
        try:
            with open(self.path, "ab") as fh:
                offset = fh.tell()
                fh.write(frame)
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
        except OSError as e:
            raise StoreWriteError(f"Cannot append to {self.path}: {e}", path=str(self.path)) from e
        return offset

    def put(self, key: str, body: bytes) -> None:
        frame = encode_frame(key, body)
        with self._lock:
            offset = self._append(frame)
            self.directory[key] = (offset, len(frame))

    def delete(self, key: str) -> None:
        with self._lock:
            if key not in self.directory:
                return
            self._append(encode_frame(key, b"", tombstone=True))
            del self.directory[key]
            self.tombstones += 1

    def _write_quarantine(self, entry: dict, raw: bytes) -> None:
        with open(self.quarantine_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({**entry, "frame_hex": raw.hex()}) + "\n")

    def quarantine(self, key: str, reason: str) -> None:
        """Copy a bad record aside as one JSON line and drop it from the store."""
        offset = self.directory.get(key, (None,))[0]
        try:
            raw = self.raw(key)
        except (KeyError, OSError):
            raw = b""
        self._write_quarantine({"key": key, "offset": offset, "reason": reason}, raw)
        logger.warning(f"Quarantined branch record '{key}': {reason}")
        self.delete(key)

    # -------------------- Maintenance --------------------

    def compact(self) -> tuple[int, int]:
        """Rewrite the file keeping live, intact frames only. Returns (kept, dropped)."""
        with self._lock:
            tmp = self.path.with_name(self.path.name + ".compact")
            live: dict[str, bytes] = {}
            dropped = 0
            for item in self._walk():
                if isinstance(item, DamagedRegion):
                    dropped += 1
                elif item.tombstone or self.directory.get(item.key, (None,))[0] != item.offset:
                    dropped += 1
                elif not item.intact or item.version != FORMAT_VERSION:
                    self._write_quarantine(
                        {"key": item.key, "offset": item.offset, "reason": "failed its checksum during compaction"},
                        self._read_at(item.offset, item.length),
                    )
                    dropped += 1
                else:
                    live[item.key] = item.body

            try:
                with open(tmp, "wb") as fh:
                    for key, body in live.items():
                        fh.write(encode_frame(key, body))
            except OSError as e:
                remove_file_quietly(tmp)
                raise StoreWriteError(f"Cannot write {tmp}: {e}", path=str(tmp)) from e

            ok, err = replace_file_verified(tmp, self.path)
            if not ok:
                raise StoreWriteError(f"Cannot replace {self.path}: {err}", path=str(self.path))

            self._scan()
        logger.info(f"Compacted {self.path}: kept {len(live)}, dropped {dropped}")
        return len(live), dropped


def open_store(path: Optional[str | Path], **kwargs) -> Optional[BranchStore]:
    return BranchStore(Path(path), **kwargs) if path else None
