"""Trust-game and opinion-propagation scenarios."""

from socsim.scenarios.profiles import ProfileRecord, ingest_profiles, synthesize_profiles

__all__ = ["ProfileRecord", "ingest_profiles", "synthesize_profiles"]
