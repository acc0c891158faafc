#!/usr/bin/env python
"""Command-line entry point for arbkit (Django management commands)."""
import os
import sys

# Hyphenated spellings of the commands
COMMAND_ALIASES = {
    'change-measure': 'change_measure',
    'report-validate': 'report_validate',
}

# Exit status for an unknown command
EXIT_UNKNOWN_COMMAND = 3


def main():
    """Run arbkit commands."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'arbkit_project.settings')
    try:
        import django
        from django.core.management import execute_from_command_line, get_commands
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc

    django.setup()
    argv = list(sys.argv)
    if len(argv) > 1 and not argv[1].startswith('-'):
        argv[1] = COMMAND_ALIASES.get(argv[1], argv[1])
        if argv[1] not in get_commands() and argv[1] != 'help':
            sys.stderr.write(f"Unknown command: '{argv[1]}'\n")
            sys.exit(EXIT_UNKNOWN_COMMAND)
    execute_from_command_line(argv)


if __name__ == '__main__':
    main()
