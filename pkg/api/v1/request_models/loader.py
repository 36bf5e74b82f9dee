from pathlib import Path
from typing import Type, TypeVar

import msgspec
import yaml

from core.errors import ConfigError

T = TypeVar("T")


def load_request(path: Path | str, model: Type[T]) -> T:
    """
    Decode a YAML or JSON config file into a request model.

    Raises:
        ConfigError: If the file is missing, unparsable or does not fit the model
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            raw = yaml.safe_load(text)
        else:
            raw = msgspec.json.decode(text)
    except (yaml.YAMLError, msgspec.DecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    try:
        return msgspec.convert(raw, model)
    except msgspec.ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
