"""
Miner app configuration
Networks and the region-mining procedure
"""

from django.apps import AppConfig


class MinerConfig(AppConfig):
    """
    Configuration class for Miner app

    The 'name' field MUST match the full Python path to the app.
    """

    name = "apps.miner"
    verbose_name = "Miner"
