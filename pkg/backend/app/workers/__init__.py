"""Ordered worker pools for independent numerical jobs."""
