"""
Distmap app configuration
Toy distribution-mapping verification
"""

from django.apps import AppConfig


class DistmapConfig(AppConfig):
    """
    Configuration class for Distmap app

    The 'name' field MUST match the full Python path to the app.
    """

    name = "apps.distmap"
    verbose_name = "Distmap"
