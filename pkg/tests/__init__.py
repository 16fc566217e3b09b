"""Tests for the bagcn package."""
