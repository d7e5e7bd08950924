# ABOUTME: Package initialization for staci conformal regions on stream networks
# ABOUTME: Defines version and sets up package-level logging configuration
"""staci - Spatio-temporal adaptive conformal inference on stream networks"""

__version__ = "0.1.0"

# Set up logging for the package
import logging

logging.getLogger(__name__).addHandler(logging.NullHandler())
