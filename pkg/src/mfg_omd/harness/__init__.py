"""Configuration, distribution sets, experiment drivers and the command line."""
