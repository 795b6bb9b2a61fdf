"""Shared exception base for the opscaler library.

Concrete error types live next to the code that raises them; everything
derives from OpscalerError so callers can catch library failures broadly.
"""


class OpscalerError(Exception):
    """Base class for all opscaler errors."""
