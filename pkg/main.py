import sys
from typing import Optional, Sequence

import rich_click as click

import api
from config import logger
from core.errors import ConfigError, DataError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and map failures to exit codes."""
    try:
        result = api.cli.main(args=argv, prog_name="cate", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return EXIT_CONFIG
    except click.Abort:
        return EXIT_CONFIG
    except ConfigError as e:
        for problem in e.problems:
            logger.error(f"config: {problem}")
        return EXIT_CONFIG
    except DataError as e:
        logger.error(f"data: {e}")
        return EXIT_DATA
    except NumericalError as e:
        logger.error(f"numerical: {e}")
        return EXIT_NUMERICAL
    except ValueError as e:
        # Invalid arguments surfacing from library calls
        logger.error(f"config: {e}")
        return EXIT_CONFIG
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
