"""Core domain services for the Azure Naming application."""
