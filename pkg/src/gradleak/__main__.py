from __future__ import annotations

import sys
from typing import Optional, Sequence

from .cli import build_parser, run_cli
from .constants import APP_NAME, EXIT_CONFIG, EXIT_RUNTIME
from .diagnostics import log_error, log_exception, log_info
from .errors import ConfigError, StageError


def exit_code_for(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    return EXIT_CONFIG if isinstance(cause, ConfigError) else EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    log_info("Application startup")
    parser = build_parser()
    args = parser.parse_args(argv)
    log_info("Parsed arguments: command=%s", args.command)
    try:
        rc = run_cli(args)
    except Exception as e:
        stage = e.stage if isinstance(e, StageError) else args.command
        message = e.cause if isinstance(e, StageError) else e
        code = exit_code_for(e)
        if code == EXIT_CONFIG:
            log_error("Command %s rejected in stage %s: %s", args.command, stage, message)
        else:
            log_exception("Command %s failed in stage %s", args.command, stage)
        print(f"{APP_NAME}: {stage}: {message}", file=sys.stderr)
        return code
    log_info("Application exit code=%s", rc)
    return rc


if __name__ == "__main__":
    try:
        raise SystemExit(main())
    except Exception:
        log_exception("Unhandled exception at process level")
        raise
