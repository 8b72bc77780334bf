"""Allow `python -m eventgrad <command> ...`."""

from eventgrad.tools.cli import main

raise SystemExit(main())
