"""
Reports app configuration
Figures, tables and report documents
"""

from django.apps import AppConfig


class ReportsConfig(AppConfig):
    """
    Configuration class for Reports app

    The 'name' field MUST match the full Python path to the app.
    """

    name = "apps.reports"
    verbose_name = "Reports"
