import asyncio
import os
import time
import uuid
from pathlib import Path
from typing import Optional

from config import logger


class CheckpointLock:
    """
    Non-blocking lock file guarding one checkpoint.

    The file `<checkpoint>.lock` holds the owner's token and its mtime is the
    owner's heartbeat. A lock not touched for `ttl` seconds is stale and may be
    taken over. Use as an async context manager and check `acquired`.
    """

    def __init__(self, checkpoint: Path | str, ttl: float = 300):
        self.path = Path(f"{checkpoint}.lock")
        self.ttl = ttl
        self.token = uuid.uuid4().hex
        self.acquired = False
        self._heartbeat: Optional[asyncio.Task] = None

    def _create(self) -> bool:
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            return False
        with os.fdopen(fd, "w") as handle:
            handle.write(self.token)
        return True

    def _read(self, path: Path) -> Optional[str]:
        try:
            return path.read_text()
        except FileNotFoundError:
            return None

    def _take_over_stale(self) -> bool:
        """Move a stale lock file aside; False if it was not stale or someone else got there first."""
        try:
            age = time.time() - self.path.stat().st_mtime
        except FileNotFoundError:
            return True
        if age <= self.ttl:
            return False

        seen = self._read(self.path)
        aside = self.path.with_name(f"{self.path.name}.stale.{self.token}")
        try:
            os.rename(self.path, aside)
        except FileNotFoundError:
            return False

        if self._read(aside) != seen:
            # Another process replaced the stale file in between; put its lock back.
            try:
                os.link(aside, self.path)
            except FileExistsError:
                pass
            aside.unlink(missing_ok=True)
            return False

        aside.unlink(missing_ok=True)
        logger.warning(f"CheckpointLock: took over stale lock {self.path} (owner {seen})")
        return True

    def claim(self) -> bool:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self._create():
            return True
        return self._take_over_stale() and self._create()

    def owned(self) -> bool:
        return self._read(self.path) == self.token

    def extend(self) -> bool:
        """Refresh the heartbeat; False once the lock is no longer ours."""
        if not self.owned():
            return False
        os.utime(self.path)
        return True

    def release(self) -> None:
        if self.acquired and self.owned():
            self.path.unlink(missing_ok=True)
        self.acquired = False

    async def _beat(self):
        while self.extend():
            await asyncio.sleep(self.ttl / 3)
        logger.error(f"CheckpointLock: lost {self.path} while running")

    async def __aenter__(self):
        self.acquired = self.claim()
        if self.acquired:
            self._heartbeat = asyncio.create_task(self._beat())
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        if self._heartbeat is not None:
            self._heartbeat.cancel()
            try:
                await self._heartbeat
            except asyncio.CancelledError:
                pass
            self._heartbeat = None
        self.release()
        return False
