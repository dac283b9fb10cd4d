"""Datasets, synthetic scenes, image transforms and batching."""
