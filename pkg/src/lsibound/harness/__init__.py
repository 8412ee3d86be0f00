"""Configuration, data ingestion, persistence and the command-line driver."""
