"""Test suite for the pydiffbridge package."""
