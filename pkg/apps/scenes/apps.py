"""
Scenes app configuration
Synthetic multi-object scenes
"""

from django.apps import AppConfig


class ScenesConfig(AppConfig):
    """
    Configuration class for Scenes app

    The 'name' field MUST match the full Python path to the app.
    """

    name = "apps.scenes"
    verbose_name = "Scenes"
