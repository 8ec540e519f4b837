"""callsift: detect and characterize malware from system-call traces."""

__version__ = "0.1.0"
