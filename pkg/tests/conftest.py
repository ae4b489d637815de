from hypothesis import settings

# property tests draw from a fixed seed so the suite is reproducible run to run
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")
