import sys
from logging.config import dictConfig
from typing import List, Optional

import click

from app.base import config
from app.base.exception_handler import catch_exceptions
from app.cli import app as cli_app


def run(argv: Optional[List[str]] = None) -> int:
    """Invoke the CLI and return the process exit code."""
    dictConfig(config.log_config)

    def invoke() -> int:
        try:
            result = cli_app(args=argv, prog_name="corruptlab", standalone_mode=False)
        except click.exceptions.UsageError as e:
            e.show()
            return 1
        except click.exceptions.Abort:
            return 1
        return result if isinstance(result, int) else 0

    return catch_exceptions(invoke)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
