"""Integration adapters for external systems (storage, slug sources, logging)."""
