"""Run configuration and result schemas."""
