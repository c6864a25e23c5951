"""
Shared behaviour of the toolkit's management commands.

Subclasses implement ``run(**options)``; domain failures are turned into
``CommandError`` with the documented exit codes (2 usage, 3 data, 4 numerical).
"""

import json
import logging

from django.core.management.base import BaseCommand, CommandError

from ..exceptions import EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE, DataError, NumericalError
from ..storage import provenance, write_json

logger = logging.getLogger(__name__)


def comma_list(value, cast=str):
    """argparse type for comma-separated lists (``--emit pgm,csv``)."""
    return [cast(part) for part in value.split(',') if part.strip()]


class ToolkitCommand(BaseCommand):
    """Runs ``run(**options)`` and maps toolkit errors to exit codes."""

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except DataError as exc:
            raise CommandError(str(exc), returncode=EXIT_DATA) from exc
        except NumericalError as exc:
            raise CommandError(str(exc), returncode=EXIT_NUMERICAL) from exc
        except ValueError as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
        except OSError as exc:
            raise CommandError(f"I/O failure: {exc}", returncode=EXIT_DATA) from exc

    def run(self, **options):
        raise NotImplementedError('subclasses of ToolkitCommand must provide a run() method')

    def write_provenance(self, path, config, seeds=None):
        """Write ``provenance.json`` next to a command's outputs."""
        record = provenance(config, seeds=seeds, command=self.command_name())
        write_json(path, {**record, 'config': json.loads(json.dumps(config, default=str))})
        return record

    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]
