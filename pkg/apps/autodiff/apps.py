"""
Autodiff app configuration
Dense tensors with reverse-mode gradients
"""

from django.apps import AppConfig


class AutodiffConfig(AppConfig):
    """
    Configuration class for Autodiff app

    The 'name' field MUST match the full Python path to the app.
    """

    name = "apps.autodiff"
    verbose_name = "Autodiff"
