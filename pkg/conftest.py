# Root marker: makes `config`, `core` and `api` importable from tests/.
