import torch

torch.set_num_threads(1)

try:
    from hypothesis import HealthCheck, settings

    settings.register_profile(
        "ci", deadline=None, suppress_health_check=[HealthCheck.too_slow]
    )
    settings.load_profile("ci")
except ImportError:
    pass
