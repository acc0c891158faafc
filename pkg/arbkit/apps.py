from django.apps import AppConfig


class ArbkitConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'arbkit'
    verbose_name = 'Arbitrage toolkit'
