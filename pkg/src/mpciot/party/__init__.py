"""MPC party service."""
