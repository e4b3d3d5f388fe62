"""
Evaluation app configuration
Mined-region quality metrics
"""

from django.apps import AppConfig


class EvaluationConfig(AppConfig):
    """
    Configuration class for Evaluation app

    The 'name' field MUST match the full Python path to the app.
    """

    name = "apps.evaluation"
    verbose_name = "Evaluation"
