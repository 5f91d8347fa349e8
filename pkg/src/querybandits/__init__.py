"""Bandit policies that pick LLM query-rewrite strategies from linguistic context."""

__version__ = "0.1.0"
