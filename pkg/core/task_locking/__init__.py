from .file_lock import CheckpointLock

__all__ = ["CheckpointLock"]
