from hypothesis import HealthCheck, settings

# fixed example streams keep the suite reproducible run to run
settings.register_profile("repo", derandomize=True, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")
