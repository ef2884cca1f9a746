"""Desk-scale machine-unlearning laboratory."""
