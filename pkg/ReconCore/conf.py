"""
Toolkit settings accessor.

Reads the ``RECON_TOOLKIT`` dict from the Django settings and falls back to
the defaults below, the same way REST framework exposes ``api_settings``:

    from ReconCore.conf import toolkit_settings
    toolkit_settings.KAPPA_MODE
"""

from django.conf import settings
from django.core.signals import setting_changed

DEFAULTS = {
    'OVERSAMPLING': 2.0,
    'KERNEL_WIDTH': 6,
    'DC_MAX_ITERS': 20,
    'DC_TOL': 1e-2,
    'DC_OVERSAMPLING': 1.25,
    'DC_KERNEL_WIDTH': 16,
    'KAPPA_MODE': 'l1',
    'NOISE_MODEL': 'circular',
    'NOISE_NORM': 'psf',
    'RESIDUAL_MODE': 'magnitude',
    'PERCENTILE': 6.0,
    'FOREGROUND_THRESHOLD': 1e-6,
    'SPECTRAL_TOL': 1e-6,
    'SPECTRAL_MAX_ITERS': 200,
    'WORKERS': 1,
}

CHOICES = {
    'KAPPA_MODE': ('l1', 'modulus'),
    'NOISE_MODEL': ('circular', 'per_component'),
    'NOISE_NORM': ('psf', 'spectral'),
    'RESIDUAL_MODE': ('magnitude', 'complex'),
}


class ToolkitSettings:
    """
    Lazy view over ``settings.RECON_TOOLKIT``.

    Attributes are resolved on first access and cached; the cache is dropped
    whenever the Django setting changes (``override_settings`` in tests).
    """

    def __init__(self, defaults=None):
        self.defaults = defaults or DEFAULTS
        self._cached_attrs = set()

    @property
    def user_settings(self):
        if not hasattr(self, '_user_settings'):
            self._user_settings = getattr(settings, 'RECON_TOOLKIT', {})
        return self._user_settings

    def __getattr__(self, attr):
        if attr not in self.defaults:
            raise AttributeError(f"Invalid toolkit setting: '{attr}'")
        try:
            val = self.user_settings[attr]
        except KeyError:
            val = self.defaults[attr]
        if attr in CHOICES and val not in CHOICES[attr]:
            raise ValueError(f"RECON_TOOLKIT['{attr}'] must be one of {CHOICES[attr]}, got {val!r}")
        self._cached_attrs.add(attr)
        setattr(self, attr, val)
        return val

    def reload(self):
        for attr in self._cached_attrs:
            delattr(self, attr)
        self._cached_attrs.clear()
        if hasattr(self, '_user_settings'):
            delattr(self, '_user_settings')


toolkit_settings = ToolkitSettings(DEFAULTS)


def reload_toolkit_settings(*args, **kwargs):
    if kwargs['setting'] == 'RECON_TOOLKIT':
        toolkit_settings.reload()


setting_changed.connect(reload_toolkit_settings)


def resolve(value, name):
    """Return ``value`` unless it is None, in which case the configured setting."""
    return getattr(toolkit_settings, name) if value is None else value
