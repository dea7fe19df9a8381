"""Federated phased elimination for linear contextual bandits."""
