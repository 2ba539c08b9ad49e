"""Battery-hybridised run-of-river hydropower FCR simulator."""
