"""
Subcommand handlers for the SAEmnesia CLI.
"""
