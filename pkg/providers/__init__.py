"""Chat-completion providers used by the synthesis agents, agents and simulated users."""
