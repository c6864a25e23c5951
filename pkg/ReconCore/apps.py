from django.apps import AppConfig


class ReconcoreConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'ReconCore'
    verbose_name = 'Radial MRI reconstruction core'
