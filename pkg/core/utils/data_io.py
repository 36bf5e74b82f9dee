import asyncio
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Literal, Sequence

import msgspec
import numpy as np
import pandas as pd

from config import logger
from core.errors import ConfigError, DataError
from core.estimation.nuisance import Sample

Expansion = Literal["none", "squares", "polynomial"]
MAX_DEGREE = 3


class ColumnRoles(msgspec.Struct, frozen=True, kw_only=True):
    outcome: str
    treatment: str
    conditioning: tuple[str, ...]
    covariates: tuple[str, ...] | Literal["all"] = "all"


class Dictionary(msgspec.Struct, frozen=True, kw_only=True):
    """Covariate dictionary b(X) with one name per column."""

    values: np.ndarray
    names: tuple[str, ...]


async def read_table_async(path: Path | str, delimiter: str = ",") -> pd.DataFrame:
    """
    Read a delimited file with a header row.

    Raises:
        ConfigError: If the file does not exist
        DataError: If the file cannot be parsed
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    try:
        return await asyncio.to_thread(pd.read_csv, path, sep=delimiter)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse {path}: {e}") from e


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column]
    missing = raw.isna().to_numpy()
    if missing.any():
        rows = (np.flatnonzero(missing)[:5] + 2).tolist()
        raise DataError(f"column '{column}' has {int(missing.sum())} missing value(s), first at line(s) {rows}")
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise DataError(
            f"column '{column}', line {first + 2}: value {raw.iloc[first]!r} is not numeric"
        )
    return values.to_numpy(dtype=np.float64)


def expand_dictionary(
    values: np.ndarray, names: Sequence[str], expansion: Expansion = "none", degree: int = 2
) -> Dictionary:
    """
    Append polynomial terms to a covariate matrix.

    "squares" adds a^2 per column; "polynomial" adds every monomial of degree
    2..degree (a^2, a*b, a^2*b, a*b*c, ...). Original columns keep their
    positions, so conditioning columns stay where they were.
    """
    values = np.asarray(values, dtype=np.float64)
    names = tuple(names)
    if expansion == "none":
        return Dictionary(values=values, names=names)
    if not 2 <= degree <= MAX_DEGREE:
        raise ConfigError(f"expansion degree must lie in [2, {MAX_DEGREE}], got {degree}")

    if expansion == "squares":
        terms = [(j, j) for j in range(len(names))]
    else:
        terms = [
            combo
            for k in range(2, degree + 1)
            for combo in combinations_with_replacement(range(len(names)), k)
        ]

    columns = [values]
    extra_names = []
    for combo in terms:
        columns.append(np.prod(values[:, list(combo)], axis=1)[:, None])
        extra_names.append(_monomial_name([names[j] for j in combo]))
    return Dictionary(values=np.hstack(columns), names=names + tuple(extra_names))


def _monomial_name(factors: list[str]) -> str:
    parts = []
    for name in dict.fromkeys(factors):
        power = factors.count(name)
        parts.append(name if power == 1 else f"{name}^{power}")
    return "*".join(parts)


def build_sample(
    frame: pd.DataFrame,
    roles: ColumnRoles,
    expansion: Expansion = "none",
    degree: int = 2,
) -> tuple[Sample, tuple[str, ...]]:
    """
    Turn a table into a Sample; conditioning columns come first in X.

    Returns:
        (sample, dictionary names)

    Raises:
        ConfigError: If the outcome or treatment column is also listed as a covariate
        DataError: On missing columns or values, non-numeric entries, a
            non-binary treatment or a constant conditioning column
    """
    if roles.covariates != "all":
        leaked = [c for c in (roles.outcome, roles.treatment) if c in roles.covariates]
        if leaked:
            raise ConfigError(f"outcome/treatment column(s) {leaked} cannot be covariates")
    if roles.covariates == "all":
        used = {roles.outcome, roles.treatment, *roles.conditioning}
        others = [c for c in frame.columns if c not in used]
    else:
        others = [c for c in roles.covariates if c not in roles.conditioning]
    base = list(roles.conditioning) + others

    required = [roles.outcome, roles.treatment, *base]
    absent = [c for c in required if c not in frame.columns]
    if absent:
        raise DataError(f"missing column(s): {absent}")

    y = _numeric_column(frame, roles.outcome)
    d = _numeric_column(frame, roles.treatment)
    if not np.all((d == 0) | (d == 1)):
        first = int(np.flatnonzero((d != 0) & (d != 1))[0])
        raise DataError(
            f"treatment column '{roles.treatment}', line {first + 2}: value {d[first]} is not 0/1"
        )
    x = np.column_stack([_numeric_column(frame, c) for c in base])
    for j, column in enumerate(roles.conditioning):
        if np.ptp(x[:, j]) == 0:
            raise DataError(f"conditioning column '{column}' is constant")

    dictionary = expand_dictionary(x, base, expansion, degree)
    logger.info(
        f"DataIO: {len(frame)} rows, {len(base)} covariates, {len(dictionary.names)} dictionary terms"
    )
    sample = Sample.build(y, d, dictionary.values, range(len(roles.conditioning)))
    return sample, dictionary.names
