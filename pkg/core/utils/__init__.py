from .rng import stream, derive_seed

__all__ = ["stream", "derive_seed"]
