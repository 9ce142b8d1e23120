"""Tests for the safe-set quantifier."""
