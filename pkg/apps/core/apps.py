"""
Core app configuration
Shared errors, validators and seeding helpers
"""

from django.apps import AppConfig


class CoreConfig(AppConfig):
    """
    Configuration class for Core app

    The 'name' field MUST match the full Python path to the app.
    """

    name = "apps.core"
    verbose_name = "Core"
