"""
Pipeline app configuration
Run configuration, run directories and commands
"""

from django.apps import AppConfig


class PipelineConfig(AppConfig):
    """
    Configuration class for Pipeline app

    The 'name' field MUST match the full Python path to the app.
    """

    name = "apps.pipeline"
    verbose_name = "Pipeline"
