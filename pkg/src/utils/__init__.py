"""Settings, run config loading and output formatting shared by the lab."""
