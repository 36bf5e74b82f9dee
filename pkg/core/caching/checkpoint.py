import asyncio
import os
import zlib
from pathlib import Path
from typing import Any, Optional

import msgpack

from config import logger


class CheckpointStore:
    """Compressed (msgpack + zlib) state file for resumable runs."""

    def __init__(self, path: Path | str):
        """
        Args:
            path: State file location; its parent directory is created on save
        """
        self.path = Path(path)

    async def get(self) -> Optional[Any]:
        """
        Read the stored state.

        Returns:
            Decoded state, or None if there is no state file or it is unreadable
        """
        if not self.path.exists():
            return None
        data = await asyncio.to_thread(self.path.read_bytes)
        return await self._deserialize_data_async(data)

    async def set(self, state: Any) -> None:
        """
        Store state atomically: write a temporary file, then rename it over the old one.

        Args:
            state: msgpack-serializable builtins (dict, list, str, int, float, None)
        """
        loop = asyncio.get_running_loop()
        await loop.run_in_executor(None, self._write, state)

    def _write(self, state: Any) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        temp_path = self.path.with_name(f"{self.path.name}.temp.{os.getpid()}")
        try:
            packed = msgpack.packb(state, use_bin_type=True)
            temp_path.write_bytes(zlib.compress(packed))
            os.replace(temp_path, self.path)
        except Exception as e:
            temp_path.unlink(missing_ok=True)
            raise e

    @staticmethod
    async def _deserialize_data_async(compressed_data: bytes) -> Any:
        loop = asyncio.get_running_loop()

        def _deserialize():
            try:
                serialized_data = zlib.decompress(compressed_data)
                return msgpack.unpackb(serialized_data, raw=False, strict_map_key=False)
            except (
                zlib.error,
                msgpack.ExtraData,
                msgpack.FormatError,
                msgpack.StackError,
                ValueError,
            ) as e:
                logger.error(f"CheckpointStore: cannot decode checkpoint: {e}")
                return None

        return await loop.run_in_executor(None, _deserialize)
