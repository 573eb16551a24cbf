"""Caustics, cancellation of singularities and their numerical probes."""
