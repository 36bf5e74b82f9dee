import asyncio
import os
import time

from core.caching import CheckpointStore
from core.task_locking import CheckpointLock


class TestCheckpointStore:
    def test_set_then_get(self, tmp_path):
        store = CheckpointStore(tmp_path / "nested" / "state.ckpt")
        state = {"format_version": "1", "records": [{"rep_index": 3, "covered": [True, False]}]}

        async def scenario():
            assert await store.get() is None
            await store.set(state)
            return await store.get()

        assert asyncio.run(scenario()) == state
        assert [p.name for p in store.path.parent.iterdir()] == ["state.ckpt"]

    def test_overwrite_replaces_state(self, tmp_path):
        store = CheckpointStore(tmp_path / "state.ckpt")

        async def scenario():
            await store.set({"records": [1]})
            await store.set({"records": [1, 2]})
            return await store.get()

        assert asyncio.run(scenario()) == {"records": [1, 2]}

    def test_corrupt_file_reads_as_empty(self, tmp_path):
        path = tmp_path / "state.ckpt"
        path.write_bytes(b"not a checkpoint")
        assert asyncio.run(CheckpointStore(path).get()) is None


class TestCheckpointLock:
    def test_second_holder_is_refused(self, tmp_path):
        path = tmp_path / "run.ckpt"

        async def scenario():
            async with CheckpointLock(path) as first:
                async with CheckpointLock(path) as second:
                    return first.acquired, second.acquired, first.owned()

        assert asyncio.run(scenario()) == (True, False, True)
        assert not (tmp_path / "run.ckpt.lock").exists()

    def test_stale_lock_is_taken_over(self, tmp_path):
        path = tmp_path / "run.ckpt"
        lock_file = tmp_path / "run.ckpt.lock"
        lock_file.write_text("someone-else")
        old = time.time() - 1000
        os.utime(lock_file, (old, old))

        async def scenario():
            async with CheckpointLock(path, ttl=60) as lock:
                late = CheckpointLock(path, ttl=60)
                return lock.acquired, lock.owned(), late.claim()

        assert asyncio.run(scenario()) == (True, True, False)
        assert not lock_file.exists()
        assert [p.name for p in tmp_path.iterdir()] == []

    def test_stale_lock_replaced_concurrently_is_restored(self, tmp_path, monkeypatch):
        path = tmp_path / "run.ckpt"
        lock_file = tmp_path / "run.ckpt.lock"
        lock_file.write_text("fresh-owner")
        old = time.time() - 1000
        os.utime(lock_file, (old, old))

        lock = CheckpointLock(path, ttl=60)
        reads = []
        original = lock._read

        def read_before_replacement(target):
            reads.append(target)
            return "dead-owner" if len(reads) == 1 else original(target)

        monkeypatch.setattr(lock, "_read", read_before_replacement)
        assert lock.claim() is False
        assert lock_file.read_text() == "fresh-owner"
        assert [p.name for p in tmp_path.iterdir()] == ["run.ckpt.lock"]

    def test_release_only_when_owned(self, tmp_path):
        path = tmp_path / "run.ckpt"
        lock_file = tmp_path / "run.ckpt.lock"

        async def scenario():
            async with CheckpointLock(path) as lock:
                lock_file.write_text("another-token")
                return lock.extend()

        assert asyncio.run(scenario()) is False
        assert lock_file.read_text() == "another-token"

    def test_extend_touches_the_file(self, tmp_path):
        path = tmp_path / "run.ckpt"
        lock_file = tmp_path / "run.ckpt.lock"

        async def scenario():
            async with CheckpointLock(path) as lock:
                old = time.time() - 100
                os.utime(lock_file, (old, old))
                assert lock.extend()
                return time.time() - lock_file.stat().st_mtime

        assert asyncio.run(scenario()) < 50
