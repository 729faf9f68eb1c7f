from django.apps import AppConfig
from django.conf import settings


class VcnodeConfig(AppConfig):
    """Initialization manager."""

    name = "vcnode"

    def ready(self):
        import torch
        torch.set_num_threads(settings.VCNODE_NUM_THREADS)
