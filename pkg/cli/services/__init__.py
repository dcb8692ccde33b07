"""Services backing the CLI subcommands."""
