"""Scenario files, field generators, writers and the command line."""
