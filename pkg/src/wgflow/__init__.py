"""Controlled Wasserstein gradient flows in one dimension."""
